#include "psgd/cli.hpp"

int main(int argc, char** argv) { return psgd::cli::run(argc, argv); }
