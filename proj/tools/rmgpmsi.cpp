#include "rmgpmsi/cli.hpp"

int main(int argc, char** argv) { return rmgpmsi::cli::run(argc, argv); }
