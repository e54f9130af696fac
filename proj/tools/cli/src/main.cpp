#include <iostream>

#include "confoundnet_cli/commands.hpp"

int main(int argc, char** argv) {
  return confoundnet::cli::run_cli(argc, argv, std::cout, std::cerr);
}
