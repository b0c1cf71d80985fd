#include <iostream>
#include <string>
#include <vector>

#include "jamba/cli.hpp"
#include "jamba/runtime.hpp"

int main(int argc, char** argv) {
  jamba::tune_allocator();
  std::vector<std::string> args(argv + 1, argv + argc);
  return jamba::run_cli(args, std::cout, std::cerr);
}
