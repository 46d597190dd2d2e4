#include <iostream>

#include "embvos/cli.hpp"

int main(int argc, char** argv) { return embvos::run_cli(argc, argv, std::cout, std::cerr); }
