#include "cfl/experiment.hpp"

int main(int argc, char** argv) { return cfl::run_cli(argc, argv); }
