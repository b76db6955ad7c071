#include <string>
#include <vector>

#include "vesselseg/cli.hpp"

int main(int argc, char** argv) {
  return vseg::cli::run_command({argv + 1, argv + argc});
}
