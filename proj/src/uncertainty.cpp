#include "suesr/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include "suesr/errors.hpp"
#include "suesr/rng.hpp"

namespace suesr {

std::pair<Tensor, Tensor> aggregate_passes(std::span<const Tensor> passes) {
    if (passes.empty()) throw InputError("aggregate_passes needs at least one pass");
    const auto& shape = passes.front().shape();
    for (const Tensor& p : passes) {
        if (p.shape() != shape) {
            throw ShapeError("pass shape " + shape_string(p.shape()) + " differs from " + shape_string(shape));
        }
    }
    const std::size_t count = passes.size();
    const double inv = 1.0 / static_cast<double>(count);
    Tensor mean(shape), stddev(shape);
    std::vector<double> samples(count);
    for (std::size_t i = 0; i < mean.size(); ++i) {
        for (std::size_t t = 0; t < count; ++t) samples[t] = passes[t][i];
        std::sort(samples.begin(), samples.end());
        if (samples.front() == samples.back()) {
            mean[i] = samples.front();
            stddev[i] = 0.0;
            continue;
        }
        double sum = 0.0;
        for (double v : samples) sum += v;
        const double mu = sum * inv;
        double sq = 0.0;
        for (double v : samples) sq += (v - mu) * (v - mu);
        mean[i] = mu;
        stddev[i] = std::sqrt(sq * inv);
    }
    return {std::move(mean), std::move(stddev)};
}

UncertaintyOutput mc_inference(const StochasticUpscaler& model, const Tensor& lr_image, int passes,
                               std::uint64_t base_seed, bool retain_passes, int workers) {
    if (passes < 1) throw InputError("mc_inference needs at least one pass (T >= 1)");
    if (lr_image.rank() != 3) throw ShapeError("mc_inference expects a C x H x W image, got " + shape_string(lr_image.shape()));
    if (!lr_image.all_finite()) throw InputError("input image contains non-finite values");
    const Tensor batch = as_batch(lr_image);

    std::vector<Tensor> outputs(static_cast<std::size_t>(passes));
    auto run_pass = [&](int t) {
        const auto mode = DropoutMode::stochastic(derive_seed(base_seed, static_cast<std::uint64_t>(t)));
        outputs[static_cast<std::size_t>(t)] = batch_item(model.upscale(batch, mode), 0);
    };

    workers = std::clamp(workers, 1, passes);
    if (workers == 1) {
        for (int t = 0; t < passes; ++t) run_pass(t);
    } else {
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
        std::vector<std::thread> threads;
        for (int w = 0; w < workers; ++w) {
            threads.emplace_back([&, w] {
                try {
                    for (int t = w; t < passes; t += workers) run_pass(t);
                } catch (...) {
                    errors[static_cast<std::size_t>(w)] = std::current_exception();
                }
            });
        }
        for (auto& th : threads) th.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }
    for (int t = 0; t < passes; ++t) {
        if (!outputs[static_cast<std::size_t>(t)].all_finite()) {
            throw NumericError("stochastic pass " + std::to_string(t) + " produced non-finite values");
        }
    }

    auto [mean, stddev] = aggregate_passes(outputs);
    UncertaintyOutput out;
    out.mean = std::move(mean);
    out.stddev = std::move(stddev);
    out.passes = passes;
    out.base_seed = base_seed;
    if (retain_passes) out.per_pass_outputs = std::move(outputs);
    return out;
}

const std::array<std::array<std::uint8_t, 3>, 256>& heatmap_colormap() {
    static const auto table = [] {
        std::array<std::array<std::uint8_t, 3>, 256> t{};
        // Piecewise-linear "hot" ramp: red rises first, then green, then blue.
        for (int i = 0; i < 256; ++i) {
            const int level = i * 3;  // 0 .. 765
            t[static_cast<std::size_t>(i)] = {static_cast<std::uint8_t>(std::min(level, 255)),
                                              static_cast<std::uint8_t>(std::clamp(level - 255, 0, 255)),
                                              static_cast<std::uint8_t>(std::clamp(level - 510, 0, 255))};
        }
        return t;
    }();
    return table;
}

double relative_luminance(const std::array<std::uint8_t, 3>& rgb) {
    return 0.2126 * rgb[0] + 0.7152 * rgb[1] + 0.0722 * rgb[2];
}

RgbImage render_heatmap(const Tensor& stddev) {
    if (stddev.rank() != 3) throw ShapeError("render_heatmap expects C x H x W, got " + shape_string(stddev.shape()));
    for (double v : stddev.values()) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw InputError("standard deviation map must be finite and non-negative");
    }
    const int channels = stddev.dim(0), h = stddev.dim(1), w = stddev.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> avg(plane, 0.0);
    for (int c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < plane; ++i) avg[i] += stddev[c * plane + i];
    for (double& v : avg) v /= channels;
    const auto [lo_it, hi_it] = std::minmax_element(avg.begin(), avg.end());
    const double lo = *lo_it, range = *hi_it - *lo_it;

    RgbImage img;
    img.width = w;
    img.height = h;
    img.pixels.resize(plane * 3);
    const auto& cmap = heatmap_colormap();
    for (std::size_t i = 0; i < plane; ++i) {
        const double norm = range > 0.0 ? (avg[i] - lo) / range : 0.0;
        const int index = std::min(255, static_cast<int>(norm * 256.0));
        const auto& color = cmap[static_cast<std::size_t>(index)];
        std::copy(color.begin(), color.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(i * 3));
    }
    return img;
}

}  // namespace suesr
