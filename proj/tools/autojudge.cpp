#include <iostream>

#include "autojudge/pipeline.hpp"

int main(int argc, char** argv) {
  return autojudge::pipeline::run_cli(argc, argv, {std::cout, std::cerr});
}
