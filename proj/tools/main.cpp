#include <iostream>

#include "claa/cli.hpp"

int main(int argc, char** argv) { return claa::cli::main(argc, argv, std::cout, std::cerr); }
