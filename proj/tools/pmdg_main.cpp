#include <string>
#include <vector>

#include "pmdg/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return pmdg::run_cli(args);
}
