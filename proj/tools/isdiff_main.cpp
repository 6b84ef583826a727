#include <iostream>

#include "isdiff/cli.hpp"

int main(int argc, char** argv) {
    return isdiff::run_cli(argc, argv, std::cout, std::cerr);
}
