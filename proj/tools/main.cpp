#include <cstdio>
#include <exception>

#include "prefdrive/cli.hpp"

int main(int argc, char** argv) {
    try {
        return prefdrive::cli::run(argc, argv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
