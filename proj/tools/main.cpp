#include "commands.hpp"

int main(int argc, char** argv) { return fsr::cli::run_cli(argc, argv); }
