#include "cli.hpp"

int main(int argc, char** argv) { return mvpcache::cli::run(argc, argv); }
