#include "eviadapt/cli.hpp"

int main(int argc, char** argv) { return eviadapt::cli::run(argc, argv); }
