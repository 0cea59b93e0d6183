#include <iostream>

#include "ragdesk/cli.hpp"

int main(int argc, char** argv) {
    return ragdesk::cli::run(argc, argv, std::cout, std::cerr);
}
