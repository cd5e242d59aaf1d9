#include <vector>

#include "hdi/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return hdi::cli_run(args);
}
