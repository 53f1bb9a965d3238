#include "metacritic/cli.hpp"

int main(int argc, char** argv) { return metacritic::cli_main(argc, argv); }
