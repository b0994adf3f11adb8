#include "bvap/commands.hpp"

int main(int argc, char** argv) { return bvap::run_cli(argc, argv); }
