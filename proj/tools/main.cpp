#include "ganf/cli/cli.hpp"

int main(int argc, char** argv) { return ganf::cli::run_main(argc, argv); }
