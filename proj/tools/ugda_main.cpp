#include "ugda/harness.hpp"

int main(int argc, char** argv) { return ugda::run_cli(argc, argv); }
