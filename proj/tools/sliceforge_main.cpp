#include <iostream>

#include "sliceforge/cli.hpp"

int main(int argc, char** argv) { return sliceforge::run_cli(argc, argv, std::cout, std::cerr); }
