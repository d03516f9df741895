#include <iostream>

#include "drclab/cli.hpp"

int main(int argc, char** argv) { return drc::run_cli(argc, argv, std::cout, std::cerr); }
