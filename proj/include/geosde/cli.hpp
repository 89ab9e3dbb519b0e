#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "geosde/core.hpp"
#include "geosde/csv.hpp"
#include "geosde/development.hpp"
#include "geosde/estimators.hpp"
#include "geosde/geometry.hpp"
#include "geosde/malliavin.hpp"
#include "geosde/manifold.hpp"
#include "geosde/mc.hpp"
#include "geosde/sde.hpp"
#include "geosde/transport.hpp"

namespace geosde {

inline constexpr const char* kVersion = "0.1.0";

/// One fully resolved run: subcommand plus every knob it may need. Flags
/// override config file values; the seed falls back to the CW_SEED variable
/// and then to 0.
struct RunConfig {
  std::string subcommand;
  std::string manifold_spec;
  std::string system_name;
  std::string origin;       // comma-separated coordinates
  std::string driver_file;  // develop input
  std::string path_file;    // transport input
  std::string out_file = "out.csv";
  std::string emit = "endpoints";
  std::string f_spec = "last";  // coordinate name like "x3", or x|x2|x3 for clark-ocone
  double t = 1.0;
  double t0 = 0.0;  // 0 = use t
  double dt = 1e-3;
  long long paths = 10000;
  long long samples = 100;
  int level = 3;
  int v_dir = 1;      // tangent coordinate of the direction for elworthy-li
  int h_dir = 1;      // tangent coordinate: h(s) = s e_{h_dir}
  int f_coord = 0;    // ambient coordinate for cylinder f (0 = last)
  double f_time = 0.0;  // cylinder time (0 = horizon)
  std::vector<double> epsilons{1e-1, 1e-2, 1e-3, 1e-4, 1e-5};
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 0;
  int n_sub = 4;
  bool deterministic = true;
  bool antithetic = false;
  bool cor731 = false;  // select the h' Ricci-weight variant in ibp

  McRunOptions mc() const {
    McRunOptions m;
    m.n_paths = paths;
    m.dt = dt;
    m.seed = seed;
    m.workers = workers;
    m.deterministic = deterministic;
    m.antithetic = antithetic;
    m.n_sub = n_sub;
    return m;
  }
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace cli_detail {

inline const std::map<std::string, std::string>& option_help() {
  static const std::map<std::string, std::string> help = {
      {"manifold", "manifold spec, e.g. sphere:N=3,rho=1"},
      {"system", "builtin diffusion system name"},
      {"origin", "comma-separated start point"},
      {"driver", "input CSV for develop (t,b1..bd)"},
      {"path", "input CSV for transport (t,x1..xN)"},
      {"out", "output CSV file"},
      {"emit", "simulate output: endpoints|paths"},
      {"f", "scalar function: coordinate name (x1,..) or x|x2|x3"},
      {"t", "time horizon"},
      {"t0", "Bismut integration cutoff (default t)"},
      {"dt", "grid step"},
      {"paths", "Monte Carlo path count"},
      {"samples", "sample count for geometry-check"},
      {"level", "bracket level for malliavin"},
      {"v-dir", "tangent coordinate index of the derivative direction"},
      {"h-dir", "tangent coordinate index for h(s)=s e_j"},
      {"f-coord", "ambient coordinate of the cylinder function"},
      {"f-time", "cylinder evaluation time"},
      {"epsilons", "comma-separated tail thresholds"},
      {"seed", "master seed (also CW_SEED)"},
      {"workers", "worker threads (0 = hardware)"},
      {"n-sub", "RK4 substeps per increment"},
      {"config", "config file (key=value lines or JSON)"},
  };
  return help;
}

inline const std::map<std::string, std::string>& flag_help() {
  static const std::map<std::string, std::string> help = {
      {"deterministic-reduction", "bit-exact ordered reduction (default on)"},
      {"no-deterministic-reduction", "streaming reduction"},
      {"antithetic", "antithetic driver pairing"},
      {"cor731-variant", "use h' inside the Ricci weight term"},
  };
  return help;
}

inline bool truthy(const std::string& value) {
  return value == "1" || value == "true" || value == "on" || value == "yes";
}

inline bool apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto as_ll = [&] { return std::stoll(value); };
  auto as_d = [&] { return std::stod(value); };
  if (key == "manifold") cfg.manifold_spec = value;
  else if (key == "system") cfg.system_name = value;
  else if (key == "origin") cfg.origin = value;
  else if (key == "driver") cfg.driver_file = value;
  else if (key == "path") cfg.path_file = value;
  else if (key == "out") cfg.out_file = value;
  else if (key == "emit") cfg.emit = value;
  else if (key == "f") cfg.f_spec = value;
  else if (key == "t") cfg.t = as_d();
  else if (key == "t0") cfg.t0 = as_d();
  else if (key == "dt") cfg.dt = as_d();
  else if (key == "paths") cfg.paths = as_ll();
  else if (key == "samples") cfg.samples = as_ll();
  else if (key == "level") cfg.level = static_cast<int>(as_ll());
  else if (key == "v-dir") cfg.v_dir = static_cast<int>(as_ll());
  else if (key == "h-dir") cfg.h_dir = static_cast<int>(as_ll());
  else if (key == "f-coord") cfg.f_coord = static_cast<int>(as_ll());
  else if (key == "f-time") cfg.f_time = as_d();
  else if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
    cfg.seed_set = true;
  } else if (key == "workers") cfg.workers = static_cast<int>(as_ll());
  else if (key == "n-sub") cfg.n_sub = static_cast<int>(as_ll());
  else if (key == "epsilons") {
    cfg.epsilons.clear();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) cfg.epsilons.push_back(std::stod(item));
  } else if (key == "deterministic-reduction") cfg.deterministic = true;
  else if (key == "no-deterministic-reduction") cfg.deterministic = false;
  else if (key == "antithetic") cfg.antithetic = true;
  else if (key == "cor731-variant") cfg.cor731 = true;
  else return false;
  return true;
}

inline void load_config_file(RunConfig& cfg, const std::string& file,
                             const std::vector<std::string>& cli_keys) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot open config file: " + file);
  auto overridden = [&](const std::string& key) {
    for (const auto& k : cli_keys) {
      if (k == key) return true;
    }
    return false;
  };
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t first = content.find_first_not_of(" \t\r\n");
  std::vector<std::pair<std::string, std::string>> kvs;
  if (first != std::string::npos && content[first] == '{') {
    // Minimal flat JSON object: string/number/bool values only.
    std::size_t i = first + 1;
    auto skip_ws = [&] {
      while (i < content.size() && (std::isspace(static_cast<unsigned char>(content[i])) ||
                                    content[i] == ','))
        ++i;
    };
    for (skip_ws(); i < content.size() && content[i] != '}'; skip_ws()) {
      if (content[i] != '"') throw UsageError("config JSON: expected a key string");
      std::size_t close = content.find('"', i + 1);
      std::string key = content.substr(i + 1, close - i - 1);
      i = content.find(':', close);
      if (i == std::string::npos) throw UsageError("config JSON: expected ':'");
      ++i;
      while (i < content.size() && std::isspace(static_cast<unsigned char>(content[i]))) ++i;
      std::string value;
      if (content[i] == '"') {
        std::size_t vclose = content.find('"', i + 1);
        value = content.substr(i + 1, vclose - i - 1);
        i = vclose + 1;
      } else {
        std::size_t end = content.find_first_of(",}\n", i);
        value = content.substr(i, end - i);
        while (!value.empty() && std::isspace(static_cast<unsigned char>(value.back()))) {
          value.pop_back();
        }
        i = end;
      }
      kvs.emplace_back(key, value);
    }
  } else {
    std::stringstream ss(content);
    std::string line;
    while (std::getline(ss, line)) {
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const std::size_t a = line.find_first_not_of(" \t\r");
      if (a == std::string::npos) continue;
      const std::size_t b = line.find_last_not_of(" \t\r");
      line = line.substr(a, b - a + 1);
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) throw UsageError("config file: expected key=value: " + line);
      std::string key = line.substr(0, eq);
      std::string value = line.substr(eq + 1);
      while (!key.empty() && key.back() == ' ') key.pop_back();
      while (!value.empty() && value.front() == ' ') value.erase(value.begin());
      kvs.emplace_back(key, value);
    }
  }
  for (const auto& [key, value] : kvs) {
    if (overridden(key)) continue;
    if (!apply_key(cfg, key, value.empty() ? "1" : value)) {
      throw UsageError("config file: unknown key: " + key);
    }
  }
}

inline Vec parse_coords(const std::string& text, int expect_dim, const char* what) {
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) vals.push_back(std::stod(item));
  if (expect_dim > 0 && static_cast<int>(vals.size()) != expect_dim) {
    throw UsageError(std::string(what) + ": expected " + std::to_string(expect_dim) +
                     " coordinates, got " + std::to_string(vals.size()));
  }
  Vec v(static_cast<int>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) v[static_cast<int>(i)] = vals[i];
  return v;
}

}  // namespace cli_detail

inline const std::vector<std::string>& cli_subcommands() {
  static const std::vector<std::string> subs = {
      "geometry-check", "transport",   "develop", "simulate",    "heat",
      "bismut",         "elworthy-li", "ibp",     "clark-ocone", "malliavin"};
  return subs;
}

inline std::string usage_text() {
  std::string out = "usage: geosde <subcommand> [--key value ...] [--flag ...]\n\nsubcommands:";
  for (const auto& s : cli_subcommands()) out += " " + s;
  out += "\n\noptions:\n";
  for (const auto& [key, help] : cli_detail::option_help()) {
    out += "  --" + key + std::string(key.size() < 22 ? 22 - key.size() : 1, ' ') + help + "\n";
  }
  out += "flags:\n";
  for (const auto& [key, help] : cli_detail::flag_help()) {
    out += "  --" + key + std::string(key.size() < 22 ? 22 - key.size() : 1, ' ') + help + "\n";
  }
  return out;
}

/// Parses argv (after the program name); flags override config-file values,
/// and unknown keys anywhere are usage errors.
inline RunConfig parse_config(const std::vector<std::string>& args) {
  if (args.empty()) throw UsageError(usage_text());
  RunConfig cfg;
  cfg.subcommand = args[0];
  bool known_sub = false;
  for (const auto& s : cli_subcommands()) known_sub |= (s == cfg.subcommand);
  if (!known_sub) throw UsageError("unknown subcommand: " + cfg.subcommand);

  std::string config_file;
  std::vector<std::string> cli_keys;
  for (std::size_t i = 1; i < args.size(); ++i) {
    std::string key = args[i];
    if (key.rfind("--", 0) != 0) throw UsageError("expected --option, got: " + key);
    key = key.substr(2);
    const bool is_flag = cli_detail::flag_help().count(key) > 0;
    std::string value;
    if (is_flag) {
      value = "1";
    } else {
      if (i + 1 >= args.size()) throw UsageError("missing value for --" + key);
      value = args[++i];
    }
    if (key == "config") {
      config_file = value;
      continue;
    }
    if (!cli_detail::apply_key(cfg, key, value)) throw UsageError("unknown option: --" + key);
    cli_keys.push_back(key);
  }
  if (!config_file.empty()) cli_detail::load_config_file(cfg, config_file, cli_keys);

  if (!cfg.seed_set) {
    if (const char* env = std::getenv("CW_SEED")) {
      cfg.seed = static_cast<std::uint64_t>(std::stoull(env));
      cfg.seed_set = true;
    }
  }

  // Subcommand-specific requirements.
  const bool needs_manifold = cfg.subcommand != "clark-ocone" && cfg.subcommand != "malliavin";
  if (needs_manifold && cfg.manifold_spec.empty()) {
    throw UsageError(cfg.subcommand + ": --manifold is required");
  }
  if (cfg.subcommand == "malliavin" && cfg.system_name.empty()) {
    throw UsageError("malliavin: --system is required");
  }
  if (cfg.subcommand == "transport" && cfg.path_file.empty()) {
    throw UsageError("transport: --path is required");
  }
  if (cfg.subcommand == "develop" && cfg.driver_file.empty()) {
    throw UsageError("develop: --driver is required");
  }
  if (cfg.dt <= 0) throw UsageError("dt must be positive");
  if (cfg.paths < 1) throw UsageError("paths must be >= 1");
  if (cfg.t0 > cfg.t) throw UsageError("t0 must not exceed t");
  return cfg;
}

namespace cli_detail {

inline ScalarField make_coordinate_f(const ManifoldModel& model, const std::string& spec) {
  int coord = model.ambient_dim - 1;
  if (spec != "last") {
    if (spec.size() < 2 || spec[0] != 'x') throw UsageError("bad --f spec: " + spec);
    coord = std::stoi(spec.substr(1)) - 1;
    if (coord < 0 || coord >= model.ambient_dim) {
      throw UsageError("--f coordinate out of range: " + spec);
    }
  }
  return coordinate_field(model, coord);
}

inline void common_metadata(CsvWriter& csv, const RunConfig& cfg) {
  csv.metadata("version", kVersion);
  csv.metadata("subcommand", cfg.subcommand);
  if (!cfg.manifold_spec.empty()) csv.metadata("manifold", cfg.manifold_spec);
  if (!cfg.system_name.empty()) csv.metadata("system", cfg.system_name);
  if (!cfg.origin.empty()) csv.metadata("origin", cfg.origin);
  csv.metadata("seed", static_cast<long long>(cfg.seed));
  csv.metadata("dt", cfg.dt);
  csv.metadata("t", cfg.t);
  if (cfg.t0 > 0) csv.metadata("t0", cfg.t0);
  csv.metadata("paths", cfg.paths);
  csv.metadata("deterministic-reduction", cfg.deterministic ? "1" : "0");
  csv.metadata("antithetic", cfg.antithetic ? "1" : "0");
  csv.metadata("n-sub", static_cast<long long>(cfg.n_sub));
}

inline void write_estimate_rows(CsvWriter& csv, const std::string& name,
                                const McEstimate& est, const RunConfig& cfg) {
  csv.header({"estimator", "component", "mean", "stderr", "n_paths", "dt", "seed"});
  for (int c = 0; c < est.mean.size(); ++c) {
    csv.row() << name << static_cast<long long>(c + 1) << est.mean[c]
              << est.stderr_of_mean[c] << est.n_paths << est.dt
              << static_cast<long long>(est.seed);
  }
}

inline DiscretePath read_path_csv(const std::string& file, int ambient_dim) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot open path file: " + file);
  DiscretePath path;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.find_first_of("0123456789+-.") != 0) continue;  // header row
    std::stringstream ss(line);
    std::string item;
    std::vector<double> vals;
    while (std::getline(ss, item, ',')) vals.push_back(std::stod(item));
    if (static_cast<int>(vals.size()) < ambient_dim + 1) {
      throw UsageError("path file: row has too few columns");
    }
    path.times.push_back(vals[0]);
    Vec p(ambient_dim);
    for (int i = 0; i < ambient_dim; ++i) p[i] = vals[static_cast<std::size_t>(i) + 1];
    path.points.push_back(p);
  }
  if (path.size() < 2) throw UsageError("path file: need at least two rows");
  return path;
}

inline int run_geometry_check(const RunConfig& cfg) {
  const ManifoldModel model = parse_manifold(cfg.manifold_spec);
  CsvWriter csv(cfg.out_file);
  common_metadata(csv, cfg);
  csv.metadata("samples", cfg.samples);
  csv.header({"identity", "sample", "residual"});
  NormalSampler normal(stream_seed(cfg.seed, 0));
  for (long long s = 0; s < cfg.samples; ++s) {
    const Vec m = random_manifold_point(model, normal);
    const Mat p = model.tangent_projection(m);
    const Mat q = model.normal_projection(m);
    const TangentVector u = random_tangent(model, m, normal);
    const TangentVector v = random_tangent(model, m, normal);
    const TangentVector w = random_tangent(model, m, normal);
    const TangentVector z = random_tangent(model, m, normal);
    csv.row() << "proj_idempotent" << s << (p * p - p).norm();
    csv.row() << "proj_symmetric" << s << (p - p.transpose()).norm();
    csv.row() << "proj_complement" << s << (p * q).norm();
    csv.row() << "proj_trace" << s << std::abs(p.trace() - model.manifold_dim);
    if (!model.is_flat()) {
      const Mat dqu = model.dq_dir(m, u.vec);
      const Mat dqv = model.dq_dir(m, v.vec);
      csv.row() << "dq_torsion" << s << (dqu * v.vec - dqv * u.vec).norm();
      csv.row() << "dq_qq" << s << (q * dqu * q).norm();
      csv.row() << "dq_pp" << s << (p * dqu * p).norm();
      const TangentVector r_uv_w = curvature(model, u, v, w);
      const TangentVector r_vu_w = curvature(model, v, u, w);
      csv.row() << "curv_antisym" << s << (r_uv_w.vec + r_vu_w.vec).norm();
      const Mat r_op = dqu * dqv - dqv * dqu;
      csv.row() << "curv_skew" << s << (r_op + r_op.transpose()).norm();
      const TangentVector r_wz_u = curvature(model, w, z, u);
      csv.row() << "curv_pair" << s
                << std::abs(r_uv_w.vec.dot(z.vec) - r_wz_u.vec.dot(v.vec));
      const TangentVector ric_u = ricci(model, u);
      const TangentVector ric_v = ricci(model, v);
      csv.row() << "ricci_symmetric" << s
                << std::abs(ric_u.vec.dot(v.vec) - u.vec.dot(ric_v.vec));
      if (model.kind == ModelKind::sphere) {
        const double rho2 = model.scale * model.scale;
        const Vec analytic =
            (v.vec.dot(w.vec) * u.vec - u.vec.dot(w.vec) * v.vec) / rho2;
        csv.row() << "curv_analytic" << s << (r_uv_w.vec - analytic).norm();
      }
      if (model.name == "cylinder" || model.kind == ModelKind::flat) {
        csv.row() << "curv_zero" << s << r_uv_w.vec.norm();
      }
    }
  }
  return 0;
}

inline int run_transport(const RunConfig& cfg) {
  const ManifoldModel model = parse_manifold(cfg.manifold_spec);
  const DiscretePath path = read_path_csv(cfg.path_file, model.ambient_dim);
  for (const Vec& pnt : path.points) model.require_on_manifold(pnt);
  const FramePath frames = parallel_transport(model, path);
  CsvWriter csv(cfg.out_file);
  common_metadata(csv, cfg);
  const int n = model.ambient_dim;
  std::vector<std::string> cols{"t"};
  for (int i = 1; i <= n; ++i) cols.push_back("x" + std::to_string(i));
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= n; ++j) {
      cols.push_back("u" + std::to_string(i) + std::to_string(j));
    }
  }
  csv.header(cols);
  for (std::size_t k = 0; k < path.size(); ++k) {
    auto row = csv.row();
    row << path.times[k];
    for (int i = 0; i < n; ++i) row << path.points[k][i];
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) row << frames.frames[k](i, j);
    }
  }
  return 0;
}

inline int run_develop(const RunConfig& cfg) {
  const ManifoldModel model = parse_manifold(cfg.manifold_spec);
  const Vec origin = parse_coords(cfg.origin, model.ambient_dim, "develop origin");
  std::ifstream in(cfg.driver_file);
  if (!in) throw UsageError("cannot open driver file: " + cfg.driver_file);
  EuclideanPath b;
  std::string line;
  const int d = model.manifold_dim;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.find_first_of("0123456789+-.") != 0) continue;
    std::stringstream ss(line);
    std::string item;
    std::vector<double> vals;
    while (std::getline(ss, item, ',')) vals.push_back(std::stod(item));
    if (static_cast<int>(vals.size()) < d + 1) throw UsageError("driver file: short row");
    b.times.push_back(vals[0]);
    Vec val(d);
    for (int i = 0; i < d; ++i) val[i] = vals[static_cast<std::size_t>(i) + 1];
    b.values.push_back(val);
  }
  if (b.size() < 2) throw UsageError("driver file: need at least two rows");
  const DevelopResult dev = develop(model, origin, b);
  CsvWriter csv(cfg.out_file);
  common_metadata(csv, cfg);
  {
    std::ostringstream basis;
    basis << dev.basis.format(Eigen::IOFormat(17, 0, ",", ";", "", "", "", ""));
    csv.metadata("tangent-basis", basis.str());
  }
  std::vector<std::string> cols{"t"};
  for (int i = 1; i <= model.ambient_dim; ++i) cols.push_back("x" + std::to_string(i));
  csv.header(cols);
  for (std::size_t k = 0; k < dev.path.size(); ++k) {
    auto row = csv.row();
    row << dev.path.times[k];
    for (int i = 0; i < model.ambient_dim; ++i) row << dev.path.points[k][i];
  }
  return 0;
}

inline int run_simulate(const RunConfig& cfg) {
  const ManifoldModel model = parse_manifold(cfg.manifold_spec);
  const Vec origin = cfg.origin.empty()
                         ? model.reference_point
                         : parse_coords(cfg.origin, model.ambient_dim, "simulate origin");
  CsvWriter csv(cfg.out_file);
  common_metadata(csv, cfg);
  csv.metadata("emit", cfg.emit);
  SimOptions sim;
  sim.n_sub = cfg.n_sub;
  sim.features.antidev = true;
  const int n = model.ambient_dim;
  const int d = model.manifold_dim;
  if (cfg.emit == "endpoints") {
    std::vector<std::string> cols{"path_index"};
    for (int i = 1; i <= n; ++i) cols.push_back("x" + std::to_string(i));
    for (int i = 1; i <= d; ++i) cols.push_back("b" + std::to_string(i));
    csv.header(cols);
    const McRunOptions mc = cfg.mc();
    // Workers fill per-path slots; rows are then written in path order, so the
    // file bytes do not depend on the worker count.
    std::vector<double> slots(static_cast<std::size_t>(cfg.paths) *
                              static_cast<std::size_t>(n + d));
    parallel_paths(cfg.paths, cfg.workers, [&](std::uint64_t idx) {
      const DrivingPath driver = mc_driver(mc, n, cfg.t, idx);
      const GeometricPath path = simulate_projection_bm(model, origin, driver, sim);
      double* slot = &slots[static_cast<std::size_t>(idx) * (n + d)];
      for (int c = 0; c < n; ++c) slot[c] = path.points.back()[c];
      for (int c = 0; c < d; ++c) slot[n + c] = path.antidev.back()[c];
    });
    for (long long i = 0; i < cfg.paths; ++i) {
      auto row = csv.row();
      row << i;
      const double* slot = &slots[static_cast<std::size_t>(i) * (n + d)];
      for (int c = 0; c < n + d; ++c) row << slot[c];
    }
    return 0;
  }
  if (cfg.emit != "paths") throw UsageError("simulate: --emit must be endpoints or paths");
  std::vector<std::string> cols{"path_index", "t"};
  for (int i = 1; i <= n; ++i) cols.push_back("x" + std::to_string(i));
  csv.header(cols);
  McRunOptions mc = cfg.mc();
  for (long long i = 0; i < cfg.paths; ++i) {
    const DrivingPath driver = mc_driver(mc, n, cfg.t, static_cast<std::uint64_t>(i));
    const GeometricPath path = simulate_projection_bm(model, origin, driver, sim);
    for (std::size_t k = 0; k < path.size(); ++k) {
      auto row = csv.row();
      row << i << path.times[k];
      for (int c = 0; c < n; ++c) row << path.points[k][c];
    }
  }
  return 0;
}

inline int run_estimator(const RunConfig& cfg) {
  const ManifoldModel model = parse_manifold(cfg.manifold_spec);
  const Vec origin = cfg.origin.empty()
                         ? model.reference_point
                         : parse_coords(cfg.origin, model.ambient_dim, "origin");
  model.require_on_manifold(origin);
  const double t0 = cfg.t0 > 0 ? cfg.t0 : cfg.t;
  CsvWriter csv(cfg.out_file);
  common_metadata(csv, cfg);

  if (cfg.subcommand == "heat") {
    const ScalarField f = make_coordinate_f(model, cfg.f_spec);
    const McEstimate est = heat_expectation(model, origin, f, cfg.t, cfg.mc());
    write_estimate_rows(csv, "heat", est, cfg);
    return 0;
  }
  if (cfg.subcommand == "bismut") {
    const ScalarField f = make_coordinate_f(model, cfg.f_spec);
    const McEstimate est = bismut_gradient(model, origin, f, cfg.t, t0, cfg.mc());
    write_estimate_rows(csv, "bismut", est, cfg);
    return 0;
  }
  if (cfg.subcommand == "elworthy-li") {
    const ScalarField f = make_coordinate_f(model, cfg.f_spec);
    const SdeSystem sys = projection_system(model, origin);
    const Mat basis = tangent_basis(model, origin);
    if (cfg.v_dir < 1 || cfg.v_dir > model.manifold_dim) {
      throw UsageError("elworthy-li: --v-dir out of range");
    }
    const Vec v = basis.col(cfg.v_dir - 1);
    const McEstimate est = elworthy_li_gradient(sys, v, f, cfg.t, t0, cfg.mc());
    write_estimate_rows(csv, "elworthy-li", est, cfg);
    return 0;
  }
  if (cfg.subcommand == "ibp") {
    const int d = model.manifold_dim;
    if (cfg.h_dir < 1 || cfg.h_dir > d) throw UsageError("ibp: --h-dir out of range");
    const int hj = cfg.h_dir - 1;
    CameronMartinPath h;
    h.value = [hj, d](double s) {
      Vec v = Vec::Zero(d);
      v[hj] = s;
      return v;
    };
    h.slope = [hj, d](double) {
      Vec v = Vec::Zero(d);
      v[hj] = 1.0;
      return v;
    };
    const int coord = cfg.f_coord > 0 ? cfg.f_coord - 1 : model.ambient_dim - 1;
    const double s1 = cfg.f_time > 0 ? cfg.f_time : cfg.t;
    CylinderFunction f;
    f.times = {s1};
    f.eval = [coord](const std::vector<Vec>& xs) { return xs[0][coord]; };
    f.ambient_grad = [coord, n = model.ambient_dim](int, const std::vector<Vec>&) {
      Vec g = Vec::Zero(n);
      g[coord] = 1.0;
      return g;
    };
    const IbpWeight weight =
        cfg.cor731 ? IbpWeight::ricci_times_h_slope : IbpWeight::ricci_times_h;
    const McEstimate est = ibp_residual(model, origin, h, f, cfg.t, cfg.mc(), weight);
    write_estimate_rows(csv, "ibp", est, cfg);
    return 0;
  }
  throw UsageError("unhandled estimator subcommand: " + cfg.subcommand);
}

inline int run_clark_ocone(const RunConfig& cfg) {
  Polynomial f(1);
  if (cfg.f_spec == "x" || cfg.f_spec == "last") {
    f = Polynomial::variable(1, 0);
  } else if (cfg.f_spec == "x2") {
    f = Polynomial::variable(1, 0) * Polynomial::variable(1, 0);
  } else if (cfg.f_spec == "x3") {
    f = Polynomial::variable(1, 0) * Polynomial::variable(1, 0) * Polynomial::variable(1, 0);
  } else {
    throw UsageError("clark-ocone: --f must be one of x, x2, x3");
  }
  const McEstimate est = clark_ocone_check(f, cfg.t, cfg.mc());
  CsvWriter csv(cfg.out_file);
  common_metadata(csv, cfg);
  write_estimate_rows(csv, "clark-ocone", est, cfg);
  return 0;
}

inline int run_malliavin(const RunConfig& cfg) {
  const SdeSystem sys = builtin_system(cfg.system_name);
  CsvWriter csv(cfg.out_file);
  common_metadata(csv, cfg);
  csv.metadata("level", static_cast<long long>(cfg.level));
  csv.header({"kind", "key", "value1", "value2"});
  const BracketTable table = bracket_table(sys, cfg.level);
  const RankReport rank = hormander_rank(table, sys.model, sys.origin);
  for (std::size_t l = 0; l < rank.rank_per_level.size(); ++l) {
    csv.row() << "rank" << static_cast<long long>(l + 1)
              << static_cast<long long>(rank.rank_per_level[l]) << 0.0;
  }
  csv.row() << "satisfied" << (rank.satisfied ? 1LL : 0LL)
            << static_cast<long long>(rank.level_achieved) << 0.0;
  if (sys.model.is_flat()) {
    const NondegeneracyReport report =
        nondegeneracy_report(sys, cfg.t, cfg.mc(), cfg.epsilons);
    csv.metadata("n_paths_kept", report.n_paths);
    csv.metadata("n_discarded", report.n_discarded);
    csv.metadata("min_eigenvalue", report.min_eigen_over_paths);
    for (std::size_t e = 0; e < report.epsilons.size(); ++e) {
      csv.row() << "tail" << format_double(report.epsilons[e])
                << report.frac_eigen_below[e] << report.frac_det_below[e];
    }
  }
  return 0;
}

}  // namespace cli_detail

/// Executes a parsed run; returns the process exit status. All output goes to
/// the CSV named by the config with a self-describing metadata header.
inline int run(const RunConfig& cfg) {
  if (cfg.subcommand == "geometry-check") return cli_detail::run_geometry_check(cfg);
  if (cfg.subcommand == "transport") return cli_detail::run_transport(cfg);
  if (cfg.subcommand == "develop") return cli_detail::run_develop(cfg);
  if (cfg.subcommand == "simulate") return cli_detail::run_simulate(cfg);
  if (cfg.subcommand == "heat" || cfg.subcommand == "bismut" ||
      cfg.subcommand == "elworthy-li" || cfg.subcommand == "ibp") {
    return cli_detail::run_estimator(cfg);
  }
  if (cfg.subcommand == "clark-ocone") return cli_detail::run_clark_ocone(cfg);
  if (cfg.subcommand == "malliavin") return cli_detail::run_malliavin(cfg);
  throw UsageError("unknown subcommand: " + cfg.subcommand);
}

}  // namespace geosde
