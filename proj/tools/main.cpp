#include "speedtrack/cli.hpp"

int main(int argc, char** argv) {
    return speedtrack::cli::run(argc, argv);
}
