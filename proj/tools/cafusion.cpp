#include <cafusion/cli.hpp>

#include <iostream>

int main(int argc, char** argv) { return cafusion::run_cli(argc, argv, std::cout, std::cerr); }
