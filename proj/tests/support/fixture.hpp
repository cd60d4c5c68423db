#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "fullanno/stub_transport.hpp"

namespace fixture {

struct SyntheticSet {
    std::filesystem::path dir;
    std::filesystem::path instances;
    std::filesystem::path captions;
    std::filesystem::path stubs;
    std::filesystem::path config;
    std::filesystem::path output;
    std::filesystem::path checkpoint_dir;
    fullanno::StubFixtures fixtures;
    int images = 0;
    int input_annotations = 0;
    int degenerate_annotations = 0;
};

struct Options {
    int images = 50;
    std::uint64_t seed = 7;
    int workers = 4;
    int batch_size = 8;
};

/// Writes a COCO instances file, a captions file, stub fixtures and a dry-run
/// config into `dir`. OCR fixtures always include "13" and "Carwford".
SyntheticSet write_synthetic(const std::filesystem::path& dir, const Options& options = {});

/// Rewrites the config in `set` with a different worker count, output path
/// and checkpoint directory.
void rewrite_config(const SyntheticSet& set, int workers, const std::filesystem::path& output,
                    const std::filesystem::path& checkpoint_dir, int batch_size = 8);

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace fixture
