#include "rvs/cli.hpp"
#include "rvs/runtime.hpp"

int main(int argc, char** argv) {
  rvs::tune_allocator();
  return rvs::cli::run(argc, argv);
}
