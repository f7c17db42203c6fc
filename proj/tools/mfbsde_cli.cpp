#include "mfbsde/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return mfbsde::run_cli(argc, argv, std::cout, std::cerr); }
