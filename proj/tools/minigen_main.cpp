#include "minigen/cli.hpp"

int main(int argc, char** argv) { return minigen::cli::run(argc, argv); }
