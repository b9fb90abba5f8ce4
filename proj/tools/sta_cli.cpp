#include <iostream>

#include "sta/cli.hpp"

int main(int argc, char** argv) {
    return sta::cli::run(argc, argv, std::cout, std::cerr);
}
