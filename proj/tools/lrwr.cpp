#include "lrwr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return lrwr::run_cli(args).exit_code;
}
