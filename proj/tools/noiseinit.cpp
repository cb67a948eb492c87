#include <iostream>
#include <string>
#include <vector>

#include "noiseinit/cli.hpp"

int main(int argc, char** argv) {
    noiseinit::tune_allocator();
    return noiseinit::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
