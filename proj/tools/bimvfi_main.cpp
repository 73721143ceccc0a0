#include <iostream>

#include "bimvfi/cli.hpp"

int main(int argc, char** argv) { return bimvfi::cli::run(argc, argv, std::cout, std::cerr); }
