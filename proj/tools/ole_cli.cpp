#include <iostream>
#include <string>
#include <vector>

#include "ole/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return ole::cli::run(std::move(args), std::cout);
}
