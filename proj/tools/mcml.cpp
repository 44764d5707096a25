#include <mcml/cli.hpp>

int main(int argc, char** argv) { return mcml::cli::run(argc, argv); }
