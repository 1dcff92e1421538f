#include <iostream>

#include "mdepth/cli.hpp"

int main(int argc, char** argv) { return mdepth::cli::run(argc, argv, std::cout, std::cerr); }
