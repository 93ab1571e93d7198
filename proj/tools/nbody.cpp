#include <iostream>

#include "nbody/harness.hpp"

int main(int argc, char** argv) { return nbody::run_cli(argc, argv, std::cout, std::cerr); }
