#include <string>
#include <vector>

#include "graphtext/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return graphtext::dispatch(args);
}
