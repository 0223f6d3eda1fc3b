#include <iostream>

#include "sembg/cli.hpp"

int main(int argc, char** argv) { return sembg::run_cli(argc, argv, std::cout, std::cerr); }
