#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "suesr/datapipe.hpp"
#include "suesr/networks.hpp"
#include "suesr/trainer.hpp"

namespace suesr {

struct DataConfig {
    std::string root;      // class-labelled source images for prepare-data
    std::string manifest;  // prepared manifest.json used by train/evaluate
    int hr_size = 256;
    SplitFractions fractions;
    std::uint64_t seed = 0;
};

struct MetricsConfig {
    std::string feature_backend = "random-conv";
    std::string mode = "deterministic";  // or "mc"
    int mc_passes = 20;
    bool write_csv = true;
};

struct InferConfig {
    int mc_passes = 20;
    std::uint64_t seed = 0;
    int workers = 1;
};

/// Whole-pipeline configuration. Every field is optional in the JSON form;
/// unknown keys are rejected.
struct RunConfig {
    DataConfig data;
    GeneratorConfig generator;
    DiscriminatorConfig discriminator;
    std::string feature_backend = "random-conv";
    std::string segmenter = "oracle-threshold";
    TrainConfig train;
    MetricsConfig metrics;
    InferConfig infer;

    void validate(bool allow_zero_epochs = false) const;
    nlohmann::json to_json() const;
    /// Sorted-key compact dump of to_json().
    std::string canonical_json() const;
    std::string hash() const;
};

/// Parses a run config. Seeds absent from the document default to
/// `default_seed` (the SUESR_SEED value when loaded from disk).
RunConfig parse_run_config(const std::string& text, std::uint64_t default_seed = 0);
RunConfig load_run_config(const std::filesystem::path& path);
/// SUESR_SEED, or 0 when unset. A malformed value raises ConfigError.
std::uint64_t env_seed();

nlohmann::json generator_config_to_json(const GeneratorConfig& c);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);
nlohmann::json discriminator_config_to_json(const DiscriminatorConfig& c);
DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j);

}  // namespace suesr
