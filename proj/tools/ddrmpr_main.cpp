#include <iostream>

#include "ddrmpr/cli.hpp"

int main(int argc, char** argv) { return ddrmpr::cli::run(argc, argv, std::cout, std::cerr); }
