#include "cli.hpp"

int main(int argc, char** argv) { return halprobe::cli_dispatch(argc, argv); }
