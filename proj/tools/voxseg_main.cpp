#include <iostream>

#include "voxseg/cli.hpp"

int main(int argc, char** argv) {
  return voxseg::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
