#include "qdcascade/cli.hpp"

int main(int argc, char** argv) { return qdcascade::cli::run(argc, argv); }
