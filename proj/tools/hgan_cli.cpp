#include <hgan/cli.hpp>
#include <hgan/runtime.hpp>

int main(int argc, char** argv) {
  hgan::tune_allocator();
  return hgan::cli::run(argc, argv);
}
