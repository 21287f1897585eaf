#include <CLI11.hpp>

#include <cstdio>

int main(int argc, char** argv) {
  CLI::App app{"multimodal multi-task training testbed"};
  app.require_subcommand(1);
  CLI11_PARSE(app, argc, argv);
  return 0;
}
