#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "suesr/tensor.hpp"

namespace suesr {

inline constexpr int kScaleFactor = 4;

struct ImagePair {
    Tensor lr;  // 3 x h x w
    Tensor hr;  // 3 x 4h x 4w
    std::string source_path;
    std::string class_label;
};

struct SplitFractions {
    double train = 0.64;
    double val = 0.16;
    double test = 0.20;

    void validate() const;
    std::array<double, 3> as_array() const { return {train, val, test}; }
    bool operator==(const SplitFractions&) const = default;
};

struct ManifestEntry {
    std::string hr;
    std::string lr;
    std::string class_label;
    bool operator==(const ManifestEntry&) const = default;
};

struct ExcludedEntry {
    std::string path;
    std::string reason;
    bool operator==(const ExcludedEntry&) const = default;
};

inline const std::array<std::string, 3> kSplitNames = {"train", "val", "test"};

struct Manifest {
    std::uint64_t seed = 0;
    SplitFractions fractions;
    std::vector<ManifestEntry> train;
    std::vector<ManifestEntry> val;
    std::vector<ManifestEntry> test;
    std::vector<ExcludedEntry> excluded;
    /// Directory that relative paths are resolved against (not serialized).
    std::filesystem::path base_dir;

    const std::vector<ManifestEntry>& split(const std::string& name) const;
    std::vector<ManifestEntry>& split(const std::string& name);
    std::filesystem::path resolve(const std::string& path) const;
    bool operator==(const Manifest& o) const {
        return seed == o.seed && fractions == o.fractions && train == o.train && val == o.val && test == o.test &&
               excluded == o.excluded;
    }
};

/// Anti-aliased bicubic resampling (Keys kernel, a = -0.5, support widened by
/// the downscale factor), separable, horizontal pass first. No clamping.
Tensor bicubic_resize(const Tensor& image, int out_h, int out_w);

/// 3 x S x S -> 3 x S/f x S/f, clamped to [0, 1].
Tensor bicubic_downsample(const Tensor& hr, int factor);
/// Bicubic upscaling baseline, clamped to [0, 1].
Tensor bicubic_upsample(const Tensor& lr, int factor);

/// Largest-remainder apportionment of n items; ties go to the earlier split.
std::array<std::size_t, 3> largest_remainder(std::size_t n, const SplitFractions& fractions);

/// Per-class, per-split counts. Every class receives floor or floor + 1 of
/// its proportional share in each split, and the split totals equal the
/// largest-remainder apportionment of the whole collection.
std::map<std::string, std::array<std::size_t, 3>> stratified_counts(
    const std::map<std::string, std::size_t>& class_sizes, const SplitFractions& fractions);

/// Splits labelled items (class -> item paths) into train/val/test entries.
/// Each class is sorted, seed-shuffled, then sliced by stratified_counts().
Manifest allocate_manifest(const std::map<std::string, std::vector<std::string>>& items_by_class,
                           const SplitFractions& fractions, std::uint64_t seed);

/// Scans `root/<class>/<image>` and builds a stratified manifest. Unreadable
/// images are skipped and listed under `excluded`; an empty class directory
/// raises IngestionError.
Manifest build_manifest(const std::filesystem::path& root, const SplitFractions& fractions, std::uint64_t seed);

std::string manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(const std::string& text, const std::filesystem::path& base_dir = {});
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

struct PrepareResult {
    Manifest manifest;  // paths relative to the output directory
    std::size_t written = 0;
    std::size_t skipped = 0;
    std::size_t failed = 0;
};

/// Materializes `<out>/{train,val,test}/{hr,lr}/<class>__<stem>.png` and
/// `<out>/manifest.json`. HR images are center-cropped to a square and
/// resized to hr_size; LR images are the bicubic downsample of the stored
/// 8-bit HR. Files whose bytes are unchanged are not rewritten.
PrepareResult prepare_dataset(const Manifest& manifest, const std::filesystem::path& out_dir, int hr_size = 256,
                              int factor = kScaleFactor);

/// Writes `n` procedural images (flat shapes on smooth textured backgrounds)
/// to `out/<class>/<class>_<index>.png`, classes assigned round-robin.
std::vector<std::filesystem::path> synthesize_toy_dataset(const std::filesystem::path& out_dir, int n, int hr_size,
                                                          std::uint64_t seed);

inline const std::array<std::string, 2> kToyClasses = {"circles", "rectangles"};

/// Loads one prepared pair, checking the x4 size relation.
ImagePair load_pair(const Manifest& manifest, const ManifestEntry& entry);

/// Loads every pair of a prepared split, checking the x4 size relation.
std::vector<ImagePair> load_split(const Manifest& manifest, const std::string& split);

}  // namespace suesr
