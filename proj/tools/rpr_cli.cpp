#include <iostream>
#include <string>
#include <vector>

#include "rpr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return rpr::run_cli(args, std::cout, std::cerr);
}
