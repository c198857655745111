#include "conceptevo/cli.hpp"

int main(int argc, char** argv) { return conceptevo::run_cli(argc, argv); }
