#include "shortcut/cli.hpp"

int main(int argc, char** argv) { return shortcut::run_cli(argc, argv); }
