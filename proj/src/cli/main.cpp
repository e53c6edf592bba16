#include <cstdlib>
#include <iostream>

#include "karma/cli/commands.hpp"

int main(int argc, char** argv) {
  return karma::cli::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr,
                             std::getenv("KARMA_SEED"));
}
