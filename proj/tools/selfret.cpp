#include "selfret/cli/commands.hpp"

int main(int argc, char** argv) { return selfret::cli::main(argc, argv); }
