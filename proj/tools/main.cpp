#include "hbsimex/cli.hpp"

int main(int argc, char** argv) { return hbsimex::cli::run(argc, argv); }
