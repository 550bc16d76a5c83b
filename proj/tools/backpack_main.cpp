#include <iostream>

#include "backpack/cli.hpp"

int main(int argc, char** argv) { return backpack::run_cli(argc, argv, std::cout, std::cerr); }
