#pragma once

#include <filesystem>
#include <string>

#include "suesr/datapipe.hpp"
#include "suesr/networks.hpp"

namespace fixture {

inline std::filesystem::path fresh_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("suesr_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// Synthesizes and prepares a small toy dataset; returns the prepared manifest path.
inline std::filesystem::path toy_dataset(const std::string& name, int n, int hr_size, std::uint64_t seed) {
    const auto root = fresh_dir(name);
    suesr::synthesize_toy_dataset(root / "raw", n, hr_size, seed);
    const auto m = suesr::build_manifest(root / "raw", {0.5, 0.25, 0.25}, seed);
    suesr::prepare_dataset(m, root / "prepared", hr_size);
    return root / "prepared" / "manifest.json";
}

inline suesr::GeneratorConfig toy_generator() {
    suesr::GeneratorConfig g;
    g.base_channels = 4;
    g.num_rrdb = 1;
    g.growth_channels = 2;
    g.dense_blocks_per_rrdb = 1;
    return g;
}

inline suesr::DiscriminatorConfig toy_discriminator(int patch = 32) {
    suesr::DiscriminatorConfig d;
    d.patch_size = patch;
    d.base_channels = 4;
    d.num_stages = 2;
    d.hidden_units = 8;
    return d;
}

}  // namespace fixture
