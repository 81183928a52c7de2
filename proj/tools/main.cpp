#include "commands.hpp"

int main(int argc, char** argv) { return sdr::cli::run(argc, argv); }
