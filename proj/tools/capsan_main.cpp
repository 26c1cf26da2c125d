#include <iostream>
#include <vector>

#include "capsan/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return capsan::cli::run(args, std::cout, std::cerr);
}
