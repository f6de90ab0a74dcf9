#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "suesr/errors.hpp"
#include "suesr/uncertainty.hpp"

using namespace suesr;

namespace {

/// Emits 0.2 on even pass seeds' parity and 0.6 otherwise at every pixel.
class AlternatingStub : public StochasticUpscaler {
public:
    Tensor upscale(const Tensor& lr, const DropoutMode& mode) const override {
        const int n = lr.dim(0), h = lr.dim(2) * 4, w = lr.dim(3) * 4;
        const bool first = mode.seed() == derive_seed(0, 0);
        return Tensor({n, 3, h, w}, first ? 0.2 : 0.6);
    }
    double dropout_rate() const override { return 0.5; }
};

class NanStub : public StochasticUpscaler {
public:
    Tensor upscale(const Tensor& lr, const DropoutMode& mode) const override {
        Tensor t({1, 3, lr.dim(2) * 4, lr.dim(3) * 4}, 0.5);
        if (mode.seed() == derive_seed(0, 3)) t[7] = std::numeric_limits<double>::quiet_NaN();
        return t;
    }
    double dropout_rate() const override { return 0.5; }
};

GeneratorConfig tiny(double p) {
    GeneratorConfig c;
    c.base_channels = 4;
    c.growth_channels = 2;
    c.num_rrdb = 1;
    c.dense_blocks_per_rrdb = 1;
    c.dropout_rate = p;
    return c;
}

}  // namespace

TEST_CASE("aggregate_passes closed forms") {
    const std::vector<Tensor> one = {oracle::random_tensor({3, 2, 2}, 1)};
    auto [m1, s1] = aggregate_passes(one);
    for (std::size_t i = 0; i < m1.size(); ++i) {
        CHECK(m1[i] == one[0][i]);
        CHECK(s1[i] == 0.0);
    }
    const std::vector<Tensor> three = {Tensor({1, 1, 1}, 1.0), Tensor({1, 1, 1}, 2.0), Tensor({1, 1, 1}, 3.0)};
    auto [m3, s3] = aggregate_passes(three);
    CHECK(m3[0] == doctest::Approx(2.0));
    CHECK(s3[0] == doctest::Approx(std::sqrt(2.0 / 3.0)));
    const std::vector<Tensor> mismatched = {Tensor({1, 1, 1}), Tensor({1, 1, 2})};
    CHECK_THROWS_AS(aggregate_passes(mismatched), ShapeError);
}

TEST_CASE("aggregate_passes matches the two-loop oracle and ignores pass order") {
    std::vector<Tensor> passes;
    for (int t = 0; t < 7; ++t) passes.push_back(oracle::random_tensor({3, 8, 8}, 100 + static_cast<std::uint64_t>(t)));
    auto [m, s] = aggregate_passes(passes);
    auto [rm, rs] = oracle::mean_std(passes);
    for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(std::abs(m[i] - rm[i]) < 1e-12);
        CHECK(std::abs(s[i] - rs[i]) < 1e-12);
        CHECK(s[i] >= 0.0);
    }
    std::vector<Tensor> permuted = passes;
    std::reverse(permuted.begin(), permuted.end());
    std::swap(permuted[1], permuted[4]);
    auto [pm, ps] = aggregate_passes(permuted);
    for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(pm[i] == m[i]);
        CHECK(ps[i] == s[i]);
    }
}

TEST_CASE("mc_inference hand example with an alternating stub") {
    const AlternatingStub stub;
    const auto out = mc_inference(stub, Tensor({3, 2, 2}, 0.5), 2, 0, true);
    CHECK(out.passes == 2);
    CHECK(out.mean.at(1, 3, 5) == doctest::Approx(0.4));
    CHECK(out.stddev.at(1, 3, 5) == doctest::Approx(0.2));
}

TEST_CASE("mc_inference oracle equivalence, zero-dropout law and reproducibility") {
    const auto g = build_generator(tiny(0.3), 5);
    const Tensor x = oracle::random_tensor({3, 8, 8}, 6);
    for (int t : {1, 2, 20}) {
        const auto out = mc_inference(g, x, t, 11, true);
        REQUIRE(out.per_pass_outputs.size() == static_cast<std::size_t>(t));
        auto [rm, rs] = oracle::mean_std(out.per_pass_outputs);
        for (std::size_t i = 0; i < rm.size(); ++i) {
            CHECK(std::abs(out.mean[i] - rm[i]) <= 1e-6);
            CHECK(std::abs(out.stddev[i] - rs[i]) <= 1e-6);
        }
        const auto again = mc_inference(g, x, t, 11, false);
        CHECK(again.mean.values().size() == out.mean.values().size());
        CHECK(std::equal(again.mean.values().begin(), again.mean.values().end(), out.mean.values().begin()));
        CHECK(std::equal(again.stddev.values().begin(), again.stddev.values().end(), out.stddev.values().begin()));
        CHECK(again.per_pass_outputs.empty());
    }
    const auto threaded = mc_inference(g, x, 6, 11, false, 3);
    const auto serial = mc_inference(g, x, 6, 11, false, 1);
    CHECK(std::equal(threaded.stddev.values().begin(), threaded.stddev.values().end(), serial.stddev.values().begin()));

    const auto g0 = build_generator(tiny(0.0), 5);
    const auto zero = mc_inference(g0, x, 5, 3);
    const Tensor det = generator_forward(g0, x, DropoutMode::disabled());
    for (std::size_t i = 0; i < det.size(); ++i) {
        CHECK(zero.stddev[i] == 0.0);
        CHECK(zero.mean[i] == det[i]);
    }
    CHECK(kDefaultMcPasses == 20);
}

TEST_CASE("mc_inference errors") {
    const auto g = build_generator(tiny(0.2), 5);
    CHECK_THROWS_AS(mc_inference(g, Tensor({3, 8, 8}), 0), InputError);
    const NanStub stub;
    try {
        mc_inference(stub, Tensor({3, 8, 8}), 5, 0);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("pass 3") != std::string::npos);
    }
}

TEST_CASE("heatmap rendering") {
    const auto& table = heatmap_colormap();
    for (std::size_t i = 1; i < table.size(); ++i)
        CHECK(relative_luminance(table[i]) >= relative_luminance(table[i - 1]));

    const RgbImage dark = render_heatmap(Tensor({3, 5, 5}));
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) CHECK(dark.pixel(x, y) == table[0]);

    Tensor sigma = oracle::random_tensor({3, 6, 6}, 3, 0.0, 0.1);
    for (int c = 0; c < 3; ++c) sigma.at(c, 2, 4) = 0.5;
    const RgbImage img = render_heatmap(sigma);
    const double peak = relative_luminance(img.pixel(4, 2));
    CHECK(img.pixel(4, 2) == table[255]);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
            if (x != 4 || y != 2) CHECK(relative_luminance(img.pixel(x, y)) < peak);

    Tensor negative({3, 2, 2});
    negative[1] = -1e-3;
    CHECK_THROWS_AS(render_heatmap(negative), InputError);
}
