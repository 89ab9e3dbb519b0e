#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace geosde {

/// Formats a double with 17 significant digits, '.' decimal, no locale, so
/// that values round-trip exactly and reruns diff cleanly.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

/// CSV with a self-describing header block of '#'-commented key=value
/// metadata lines followed by one header row and data rows.
class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot open output file: " + path);
  }

  void metadata(const std::string& key, const std::string& value) {
    out_ << "# " << key << "=" << value << "\n";
  }
  void metadata(const std::string& key, double value) { metadata(key, format_double(value)); }
  void metadata(const std::string& key, long long value) {
    metadata(key, std::to_string(value));
  }

  void header(const std::vector<std::string>& cols) {
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (i) out_ << ",";
      out_ << cols[i];
    }
    out_ << "\n";
  }

  class Row {
   public:
    explicit Row(std::ofstream& out) : out_(out) {}
    Row& operator<<(double v) {
      sep();
      out_ << format_double(v);
      return *this;
    }
    Row& operator<<(long long v) {
      sep();
      out_ << v;
      return *this;
    }
    Row& operator<<(const std::string& v) {
      sep();
      out_ << v;
      return *this;
    }
    ~Row() { out_ << "\n"; }

   private:
    void sep() {
      if (!first_) out_ << ",";
      first_ = false;
    }
    std::ofstream& out_;
    bool first_ = true;
  };

  Row row() { return Row(out_); }

 private:
  std::ofstream out_;
};

}  // namespace geosde
