#include "mpolar/cli/commands.hpp"

int main(int argc, char** argv) { return mpolar::cli::run_cli(argc, argv); }
