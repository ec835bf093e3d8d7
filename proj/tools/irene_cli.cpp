#include "irene/cli/cli.hpp"

int main(int argc, char** argv) { return irene::cli::dispatch(argc, argv); }
