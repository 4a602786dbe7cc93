#include <iostream>
#include <string>
#include <vector>

#include "classdrift/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return classdrift::cli::run(args, std::cout, std::cerr);
}
