#include <exception>
#include <iostream>

#include "fundus_cli.hpp"

int main(int argc, char** argv) {
  try {
    return fundus::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 1;
  }
}
