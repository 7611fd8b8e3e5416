#include "sparseflow/cli/commands.hpp"

int main(int argc, char** argv) { return sparseflow::cli::cli_main(argc, argv); }
