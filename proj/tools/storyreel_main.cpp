#include "storyreel/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return storyreel::run_cli(argc, argv, std::cout, std::cerr, std::cin); }
