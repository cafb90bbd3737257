#include "ldbp/cli/commands.hpp"

int main(int argc, char** argv) { return ldbp::cli::run_cli(argc, argv); }
