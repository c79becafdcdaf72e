#include "hdcaps/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return hdcaps::dispatch(argc, argv, std::cout, std::cerr); }
