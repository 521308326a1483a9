#include "lakeqa/cli.hpp"

int main(int argc, char** argv) { return lakeqa::run_command(argc, argv); }
