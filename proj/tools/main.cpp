#include <string>
#include <vector>

#include "ipcd/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return ipcd::run_cli(args);
}
