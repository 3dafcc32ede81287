#include "cli.hpp"

int main(int argc, char** argv) { return curveclust::cli::run(argc, argv); }
