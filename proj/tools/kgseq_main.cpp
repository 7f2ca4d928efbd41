#include "kgseq/cli.hpp"

int main(int argc, char** argv) { return kgseq::run_cli(argc, argv); }
