#include <string>
#include <vector>

#include "advdiff/cli/cli.hpp"

int main(int argc, char** argv) {
  return advdiff::cli::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
