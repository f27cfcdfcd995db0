#include "cli.hpp"

int main(int argc, char** argv) { return dslfm::cli::run(argc, argv); }
