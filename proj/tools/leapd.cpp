#include "leapd/cli.hpp"

int main(int argc, char** argv) { return leapd::cli_run(argc, argv); }
