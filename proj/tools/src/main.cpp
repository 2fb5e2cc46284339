#include <iostream>

#include "orchestra_cli/commands.hpp"

int main(int argc, char** argv) {
  return orchestra::cli::cli_main(argc, argv, std::cout, std::cerr);
}
