#include <iostream>
#include <string>
#include <vector>

#include "cli.hpp"

int main(int argc, char** argv) {
  fasm::cli::configure_logging();
  std::vector<std::string> args(argv, argv + argc);
  return fasm::cli::run(args, std::cout, std::cerr);
}
