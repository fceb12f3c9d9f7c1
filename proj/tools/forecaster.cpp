#include <iostream>

#include "forecaster/cli.hpp"

int main(int argc, char** argv) { return forecaster::cli::run(argc, argv, std::cout, std::cerr); }
