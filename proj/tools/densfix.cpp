#include "densfix/cli.hpp"

int main(int argc, char** argv) { return densfix::run_cli(argc, argv); }
