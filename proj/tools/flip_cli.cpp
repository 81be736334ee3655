#include <iostream>
#include <string>
#include <vector>

#include "flip/cli.hpp"

int main(int argc, char** argv) {
  return flip::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
