#include "tmag/cli.hpp"

int main(int argc, char** argv) { return tmag::cli_dispatch(argc, argv); }
