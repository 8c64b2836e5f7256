#include <string>
#include <vector>

#include "modest/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return modest::cli::run(args);
}
