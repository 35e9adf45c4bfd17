#include "semlc/cli.hpp"

int main(int argc, char** argv) { return semlc::cli::parse_and_dispatch(argc, argv); }
