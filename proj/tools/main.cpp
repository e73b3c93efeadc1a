#include <iostream>
#include <string>
#include <vector>

#include "rainrecon/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return rainrecon::run_cli(args, std::cout, std::cerr);
}
