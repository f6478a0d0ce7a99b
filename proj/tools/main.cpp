#include <iostream>

#include "unimask/cli.hpp"

int main(int argc, char** argv) {
  return unimask::run_cli(argc, argv, std::cout, std::cerr);
}
