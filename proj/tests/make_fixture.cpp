// Writes the synthetic dataset used by the tests so it can be run by hand:
//   make_fixture <dir> [images] [seed]
#include <iostream>

#include "fixture.hpp"

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: make_fixture <dir> [images] [seed]\n";
        return 2;
    }
    fixture::Options options;
    if (argc > 2) options.images = std::stoi(argv[2]);
    if (argc > 3) options.seed = std::stoull(argv[3]);
    std::filesystem::create_directories(argv[1]);
    const auto set = fixture::write_synthetic(std::filesystem::absolute(argv[1]), options);
    std::cout << set.config.string() << "\n";
    return 0;
}
