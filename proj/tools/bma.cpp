#include "bma/cli.hpp"

int main(int argc, char** argv) { return bma::run_cli(argc, argv); }
