#include "herdnet/cli.hpp"

int main(int argc, char** argv) { return herdnet::cli::cli_main(argc, argv); }
