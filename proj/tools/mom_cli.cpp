#include "mom/cli.hpp"

int main(int argc, char** argv) { return mom::cli::dispatch(argc, argv); }
