#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "geosde/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (!args.empty() && (args[0] == "--help" || args[0] == "-h" || args[0] == "help")) {
    std::cout << geosde::usage_text();
    return 0;
  }
  try {
    const geosde::RunConfig cfg = geosde::parse_config(args);
    return geosde::run(cfg);
  } catch (const geosde::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
