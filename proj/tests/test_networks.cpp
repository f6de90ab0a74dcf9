#include <doctest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "suesr/errors.hpp"
#include "suesr/layers.hpp"
#include "suesr/networks.hpp"

using namespace suesr;

namespace {

GeneratorConfig small_config() {
    GeneratorConfig c;
    c.base_channels = 8;
    c.num_rrdb = 1;
    c.growth_channels = 4;
    c.dense_blocks_per_rrdb = 2;
    return c;
}

bool bit_identical(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("conv2d matches direct loops for strides, padding and dilation") {
    struct Case {
        int in, out, k, stride, pad, dil;
    };
    for (const Case cs : {Case{3, 5, 3, 1, 1, 1}, Case{4, 2, 4, 2, 1, 1}, Case{2, 3, 3, 1, 2, 2}, Case{5, 4, 1, 1, 0, 1}}) {
        ParameterSet ps;
        nn::Conv2d conv(ps, "c", {cs.in, cs.out, cs.k, cs.stride, cs.pad, cs.dil});
        Rng rng(11);
        for (auto& a : ps)
            for (double& v : a.values) v = rng.uniform(-1, 1);
        const Tensor x = oracle::random_tensor({cs.in, 9, 10}, 5);
        const Tensor got = conv.forward(ps, as_batch(x));
        const Tensor want = oracle::conv2d(x, ps.at("c.weight").values, ps.at("c.bias").values, cs.out, cs.k,
                                           cs.stride, cs.pad, cs.dil);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("pixel shuffle follows the index map") {
    SUBCASE("four channels at 1x1") {
        const Tensor in({4, 1, 1}, std::vector<double>{1, 2, 3, 4});
        const Tensor out = nn::pixel_shuffle(in, 2);
        REQUIRE(out.shape() == std::vector<int>{1, 2, 2});
        CHECK(out.at(0, 0, 0) == 1);
        CHECK(out.at(0, 0, 1) == 2);
        CHECK(out.at(0, 1, 0) == 3);
        CHECK(out.at(0, 1, 1) == 4);
    }
    SUBCASE("enumerated mapping on a random grid") {
        const int c = 3, r = 2, h = 4, w = 5;
        const Tensor in = oracle::random_tensor({c * r * r, h, w}, 3);
        const Tensor out = nn::pixel_shuffle(in, r);
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int dy = 0; dy < r; ++dy)
                        for (int dx = 0; dx < r; ++dx)
                            CHECK(out.at(ch, r * y + dy, r * x + dx) == in.at(ch * r * r + dy * r + dx, y, x));
    }
    SUBCASE("256 channels become 64 at twice the size") {
        const Tensor out = nn::pixel_shuffle(Tensor({256, 3, 5}), 2);
        CHECK(out.shape() == std::vector<int>{64, 6, 10});
    }
    SUBCASE("bijection and energy preservation") {
        const Tensor in = oracle::random_tensor({2, 8, 6, 7}, 9, -1, 1);
        const Tensor out = nn::pixel_shuffle(in, 2);
        CHECK(bit_identical(nn::pixel_unshuffle(out, 2), in));
        double e_in = 0, e_out = 0;
        for (double v : in.values()) e_in += v * v;
        for (double v : out.values()) e_out += v * v;
        CHECK(e_in == doctest::Approx(e_out).epsilon(1e-14));
    }
    CHECK_THROWS_AS(nn::pixel_shuffle(Tensor({6, 2, 2}), 2), ShapeError);
}

TEST_CASE("default generator has five RRDBs") {
    const Generator g(GeneratorConfig{});
    int rrdbs = 0;
    for (const auto& l : g.layers()) rrdbs += l.kind == "rrdb";
    CHECK(rrdbs == 5);
}

TEST_CASE("parameter counts match the shape-arithmetic oracle") {
    GeneratorConfig c;
    c.num_rrdb = 2;
    c.base_channels = 16;
    const Generator g(c);
    CHECK(g.parameters().total_count() ==
          oracle::generator_parameter_count(3, 16, 2, c.growth_channels, c.dense_blocks_per_rrdb));
    const Generator d(GeneratorConfig{});
    CHECK(d.parameters().total_count() == oracle::generator_parameter_count(3, 64, 5, 32, 3));

    DiscriminatorConfig dc;
    dc.patch_size = 32;
    dc.base_channels = 8;
    dc.num_stages = 3;
    dc.hidden_units = 16;
    const Discriminator disc(dc);
    CHECK(disc.parameters().total_count() == oracle::discriminator_parameter_count(3, 32, 8, 3, 16));
}

TEST_CASE("generator construction is seed-deterministic and validates fields") {
    const auto a = build_generator(small_config(), 42);
    const auto b = build_generator(small_config(), 42);
    const auto c = build_generator(small_config(), 43);
    CHECK(a.parameters().flatten() == b.parameters().flatten());
    CHECK(a.parameters().flatten() != c.parameters().flatten());
    CHECK(a.parameters().all_finite());

    GeneratorConfig bad = small_config();
    bad.dropout_rate = 1.0;
    try {
        build_generator(bad, 1);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "model.dropout_rate");
    }
    bad = small_config();
    bad.scale_factor = 2;
    CHECK_THROWS_AS(build_generator(bad, 1), ConfigError);
    bad = small_config();
    bad.residual_scaling = 0.0;
    CHECK_THROWS_AS(build_generator(bad, 1), ConfigError);
}

TEST_CASE("generator output shape law and determinism") {
    const auto g = build_generator(small_config(), 1);
    for (auto [h, w] : {std::pair{8, 8}, std::pair{16, 16}, std::pair{12, 20}}) {
        const Tensor x = oracle::random_tensor({3, h, w}, static_cast<std::uint64_t>(h * w));
        const Tensor y = generator_forward(g, x, DropoutMode::disabled());
        CHECK(y.shape() == std::vector<int>{3, 4 * h, 4 * w});
        CHECK(y.all_finite());
        CHECK(bit_identical(y, generator_forward(g, x, DropoutMode::disabled())));
    }
    const Tensor big = generator_forward(g, oracle::random_tensor({3, 64, 64}, 2), DropoutMode::disabled());
    CHECK(big.shape() == std::vector<int>{3, 256, 256});
}

TEST_CASE("generator input validation") {
    const auto g = build_generator(small_config(), 1);
    CHECK_THROWS_AS(generator_forward(g, Tensor({3, 7, 16}), DropoutMode::disabled()), SizeError);
    Tensor nan_input({3, 8, 8}, 0.5);
    nan_input[5] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(generator_forward(g, nan_input, DropoutMode::disabled()), InputError);
    CHECK_THROWS_AS(generator_forward(g, Tensor({1, 8, 8}), DropoutMode::disabled()), ShapeError);
}

TEST_CASE("stochastic passes vary with the seed and repeat for a fixed seed") {
    const auto g = build_generator(small_config(), 1);
    const Tensor x = oracle::random_tensor({3, 8, 8}, 77);
    const Tensor a = generator_forward(g, x, DropoutMode::stochastic(1));
    const Tensor b = generator_forward(g, x, DropoutMode::stochastic(2));
    CHECK_FALSE(bit_identical(a, b));
    CHECK(bit_identical(a, generator_forward(g, x, DropoutMode::stochastic(1))));
}

TEST_CASE("dropout mask is inverted-scaled") {
    const Generator g(small_config());
    const Tensor m = g.dropout_mask({1, 8, 32, 32}, DropoutMode::stochastic(5));
    std::size_t zeros = 0;
    for (double v : m.values()) {
        CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.8)));
        zeros += v == 0.0;
    }
    const double rate = static_cast<double>(zeros) / static_cast<double>(m.size());
    CHECK(rate == doctest::Approx(0.2).epsilon(0.15));
    const Tensor off = g.dropout_mask({1, 8, 4, 4}, DropoutMode::disabled());
    for (double v : off.values()) CHECK(v == 1.0);
}

TEST_CASE("skip connection carries the dropped head features") {
    auto g = build_generator(small_config(), 3);
    for (auto& a : g.parameters())
        if (a.name.rfind("rrdb", 0) == 0 || a.name.rfind("trunk", 0) == 0) std::fill(a.values.begin(), a.values.end(), 0.0);
    const Tensor x = as_batch(oracle::random_tensor({3, 8, 8}, 4));
    GeneratorTape tape;
    g.forward(x, DropoutMode::stochastic(9), &tape);
    REQUIRE(tape.fused.same_shape(tape.dropped));
    for (std::size_t i = 0; i < tape.fused.size(); ++i) CHECK(tape.fused[i] == tape.dropped[i]);
}

TEST_CASE("discriminator yields one finite deterministic logit") {
    DiscriminatorConfig dc;
    dc.patch_size = 32;
    dc.base_channels = 8;
    dc.num_stages = 3;
    dc.hidden_units = 16;
    const auto d = build_discriminator(dc, 5);
    const Tensor img = oracle::random_tensor({3, 32, 32}, 6);
    const double a = discriminator_forward(d, img);
    CHECK(std::isfinite(a));
    CHECK(a == discriminator_forward(d, img));
    CHECK_THROWS_AS(discriminator_forward(d, Tensor({3, 16, 16})), ShapeError);

    dc.num_stages = 6;
    CHECK_THROWS_AS(dc.validate(), ConfigError);
}

TEST_CASE("default discriminator accepts 256x256 patches") {
    const auto d = build_discriminator(DiscriminatorConfig{}, 1);
    CHECK(std::isfinite(discriminator_forward(d, oracle::random_tensor({3, 256, 256}, 8))));
}

TEST_CASE("generator and discriminator gradients match finite differences") {
    GeneratorConfig c;
    c.base_channels = 2;
    c.growth_channels = 1;
    c.num_rrdb = 1;
    c.dense_blocks_per_rrdb = 1;
    auto g = build_generator(c, 21);
    const Tensor x = as_batch(oracle::random_tensor({3, 3, 3}, 22));
    const Tensor probe = oracle::random_tensor({1, 3, 12, 12}, 23, -1, 1);
    const auto mode = DropoutMode::stochastic(4);
    auto objective = [&](const std::vector<double>& flat) {
        Generator copy = g;
        copy.parameters().assign_flat(flat);
        const Tensor y = copy.forward(x, mode);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * probe[i];
        return s;
    };
    GeneratorTape tape;
    g.forward(x, mode, &tape);
    ParameterSet grads = g.parameters().zeros_like();
    g.backward(tape, probe, grads);
    const auto numeric = oracle::numeric_gradient(objective, g.parameters().flatten(), 1e-5);
    CHECK(oracle::relative_error(grads.flatten(), numeric) < 1e-6);

    DiscriminatorConfig dc;
    dc.patch_size = 8;
    dc.base_channels = 2;
    dc.num_stages = 2;
    dc.hidden_units = 3;
    auto d = build_discriminator(dc, 2);
    const Tensor imgs = oracle::random_tensor({2, 3, 8, 8}, 3);
    const Tensor w({2}, std::vector<double>{0.7, -1.3});
    DiscriminatorTape dt;
    d.forward(imgs, &dt);
    ParameterSet dgrads = d.parameters().zeros_like();
    const Tensor dx = d.backward(dt, w, &dgrads);
    auto dobj = [&](const std::vector<double>& flat) {
        Discriminator copy = d;
        copy.parameters().assign_flat(flat);
        const Tensor l = copy.forward(imgs);
        return l[0] * w[0] + l[1] * w[1];
    };
    CHECK(oracle::relative_error(dgrads.flatten(), oracle::numeric_gradient(dobj, d.parameters().flatten(), 1e-5)) < 1e-6);
    auto dxobj = [&](const std::vector<double>& flat) {
        const Tensor l = d.forward(Tensor(imgs.shape(), flat));
        return l[0] * w[0] + l[1] * w[1];
    };
    CHECK(oracle::relative_error(std::vector<double>(dx.values().begin(), dx.values().end()),
                                 oracle::numeric_gradient(dxobj, std::vector<double>(imgs.values().begin(), imgs.values().end()), 1e-5)) < 1e-6);
}
