// Standalone corpus writer; equivalent to `backpack make-corpus` but handy
// when only the generator is needed.
#include <iostream>

#include "backpack/cli.hpp"

int main(int argc, char** argv) {
  std::vector<const char*> args;
  args.push_back(argc > 0 ? argv[0] : "make_corpus");
  args.push_back("make-corpus");
  for (int i = 1; i < argc; ++i) args.push_back(argv[i]);
  return backpack::run_cli(static_cast<int>(args.size()), args.data(), std::cout, std::cerr);
}
