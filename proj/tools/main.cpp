#include "sparsecnn/cli.hpp"

int main(int argc, char** argv) {
    return sparsecnn::run_cli(argc, argv);
}
