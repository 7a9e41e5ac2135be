#include "dyn4d/cli/app.hpp"

int main(int argc, char** argv) { return dyn4d::cli::run(argc, argv); }
