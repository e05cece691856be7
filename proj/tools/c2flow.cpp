#include "c2flow/cli.hpp"

int main(int argc, char** argv) { return c2flow::cli::run(argc, argv); }
