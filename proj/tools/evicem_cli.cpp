#include "evicem/cli.hpp"

int main(int argc, char** argv) { return evicem::cli_main(argc, argv); }
