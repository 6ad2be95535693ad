#include <iostream>
#include <string>
#include <vector>

#include "layerfuse/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return layerfuse::run_cli(args, std::cout, std::cerr);
}
