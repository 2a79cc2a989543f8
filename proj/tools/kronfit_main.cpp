#include "kronfit/cli.hpp"

int main(int argc, char** argv) { return kronfit::run_cli(argc, argv); }
