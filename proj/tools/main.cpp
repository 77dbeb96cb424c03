#include "das_cli.hpp"

int main(int argc, char** argv) { return das::cli::dispatch(argc, argv); }
