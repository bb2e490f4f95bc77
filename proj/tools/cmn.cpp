#include <iostream>

#include "cmn/commands.hpp"

int main(int argc, char** argv) { return cmn::run_cli(argc, argv, std::cout, std::cerr); }
