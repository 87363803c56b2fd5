#include "pigeon/cli.hpp"

int main(int argc, char** argv) { return pigeon::cli::run(argc, argv); }
