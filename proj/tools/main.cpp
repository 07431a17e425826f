#include "sgol/cli.hpp"

int main(int argc, char** argv) { return sgol::cli_main(argc, argv); }
