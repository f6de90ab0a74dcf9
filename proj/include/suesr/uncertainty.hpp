#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "suesr/networks.hpp"
#include "suesr/tensor.hpp"

namespace suesr {

inline constexpr int kDefaultMcPasses = 20;

struct UncertaintyOutput {
    Tensor mean;    // 3 x 4H x 4W
    Tensor stddev;  // population standard deviation, same shape
    int passes = 0;
    std::uint64_t base_seed = 0;
    std::vector<Tensor> per_pass_outputs;  // filled only when retained
};

/// Runs `passes` stochastic forward passes (pass t uses the dropout stream
/// derive_seed(base_seed, t)) and aggregates them per pixel and channel.
/// `workers` > 1 evaluates passes on that many threads; results do not
/// depend on the worker count.
UncertaintyOutput mc_inference(const StochasticUpscaler& model, const Tensor& lr_image, int passes = kDefaultMcPasses,
                               std::uint64_t base_seed = 0, bool retain_passes = false, int workers = 1);

/// Population mean and standard deviation per element. Each element's
/// samples are summed in sorted order, so the result is invariant under
/// any permutation of `passes`.
std::pair<Tensor, Tensor> aggregate_passes(std::span<const Tensor> passes);

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major

    std::array<std::uint8_t, 3> pixel(int x, int y) const {
        const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
        return {pixels[i], pixels[i + 1], pixels[i + 2]};
    }
};

/// 256-entry black -> red -> yellow -> white table.
const std::array<std::array<std::uint8_t, 3>, 256>& heatmap_colormap();

/// Rec. 709 relative luminance of an 8-bit RGB triple.
double relative_luminance(const std::array<std::uint8_t, 3>& rgb);

/// Channel-averages sigma, min-max normalizes it per image (an all-equal map
/// normalizes to 0) and maps it through heatmap_colormap().
RgbImage render_heatmap(const Tensor& stddev);

}  // namespace suesr
