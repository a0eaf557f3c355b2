#include <iostream>

#include "chaintag/cli.hpp"

int main(int argc, char** argv) { return chaintag::cli::run_cli(argc, argv, std::cout, std::cerr); }
