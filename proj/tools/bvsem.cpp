#include <iostream>
#include <string>
#include <vector>

#include "bvsem/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return bvsem::cli_dispatch(args, std::cout, std::cerr);
}
