#include <iostream>

#include "stylenorm/cli.hpp"

int main(int argc, char** argv) { return stylenorm::run_cli(argc, argv, std::cout, std::cerr); }
