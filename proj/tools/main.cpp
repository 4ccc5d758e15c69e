#include "hydroadp/cli.hpp"

int main(int argc, char** argv) { return hydroadp::cli::run_cli(argc, argv); }
