#include "cli/commands.hpp"

int main(int argc, char** argv) { return flowvid::run_cli(argc, argv); }
