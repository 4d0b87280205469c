#include <iostream>

#include "ensloss/cli.hpp"

int main(int argc, char** argv) { return ensloss::cli::run(argc, argv, std::cout, std::cerr); }
