#include <iostream>
#include <string>
#include <vector>

#include "riir/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return riir::run_cli(args, std::cout, std::cerr);
}
