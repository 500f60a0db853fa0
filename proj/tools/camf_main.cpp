#include <iostream>

#include "camf/cli.hpp"

int main(int argc, char** argv) { return camf::run_cli(argc, argv, std::cout, std::cerr); }
