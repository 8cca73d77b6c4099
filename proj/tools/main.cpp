#include <string>
#include <vector>

#include "flowsr/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return flowsr::run_cli(args);
}
