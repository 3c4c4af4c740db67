#include <string>
#include <vector>

#include "mmgf/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return mmgf::cli::run(args);
}
