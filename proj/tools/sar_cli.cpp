#include <iostream>

#include "sar/cli.hpp"

int main(int argc, char** argv) { return sar::run_cli(argc, argv, std::cout, std::cerr); }
