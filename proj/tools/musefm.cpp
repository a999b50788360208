#include "musefm/cli.hpp"

int main(int argc, char** argv) { return musefm::cli::run(argc, argv); }
