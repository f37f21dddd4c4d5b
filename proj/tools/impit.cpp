#include "impit_cli.hpp"

int main(int argc, char **argv) { return impit::cli::run(argc, argv); }
