#include <iostream>

#include "urbanclip/cli/cli.hpp"

int main(int argc, char** argv) { return urbanclip::cli::run(argc, argv, std::cout, std::cerr); }
