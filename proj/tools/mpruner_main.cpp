#include "mpruner/cli.hpp"

int main(int argc, char** argv) { return mpruner::run_cli(argc, argv); }
