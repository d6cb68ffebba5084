#include "scenestress/cli.hpp"

int main(int argc, char** argv) { return scenestress::cli::run_command(argc, argv); }
