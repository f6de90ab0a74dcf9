#include <doctest.h>

#include <cmath>
#include <fstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "suesr/errors.hpp"
#include "suesr/rng.hpp"
#include "suesr/trainer.hpp"

using namespace suesr;
namespace fs = std::filesystem;

namespace {

double max_abs_diff(const ParameterSet& a, const ParameterSet& b) {
    const auto fa = a.flatten(), fb = b.flatten();
    double m = 0;
    for (std::size_t i = 0; i < fa.size(); ++i) m = std::max(m, std::abs(fa[i] - fb[i]));
    return m;
}

TrainConfig quick_config(int epochs) {
    TrainConfig c;
    c.max_epochs = epochs;
    c.patience = 5;
    c.batch_size = 2;
    c.seed = 11;
    return c;
}

}  // namespace

TEST_CASE("early stopping") {
    SUBCASE("plateau from epoch 3 stops at 13") {
        std::vector<double> v = {20, 21, 22};
        for (int i = 0; i < 12; ++i) v.push_back(22);
        EarlyStopState s;
        int stopped = 0;
        for (std::size_t i = 0; i < v.size() && !stopped; ++i) {
            auto [next, stop] = early_stop_update(s, v[i], static_cast<int>(i) + 1, 10);
            s = next;
            if (stop) stopped = static_cast<int>(i) + 1;
        }
        CHECK(stopped == 13);
        CHECK(s.best_epoch == 3);
    }
    SUBCASE("steadily improving never stops") {
        EarlyStopState s;
        for (int e = 1; e <= 30; ++e) {
            auto [next, stop] = early_stop_update(s, e * 0.1, e, 10);
            CHECK_FALSE(stop);
            s = next;
        }
        CHECK(s.best_epoch == 30);
    }
    SUBCASE("random sequences against the reference counter") {
        Rng rng(99);
        for (int trial = 0; trial < 100; ++trial) {
            const int patience = 1 + static_cast<int>(rng.below(6));
            std::vector<double> v;
            for (int i = 0; i < 25; ++i) v.push_back(std::round(rng.uniform(0, 6)));
            const auto [want_stop, want_best] = oracle::early_stop_reference(v, patience);
            EarlyStopState s;
            int got_stop = 0;
            for (std::size_t i = 0; i < v.size(); ++i) {
                auto [next, stop] = early_stop_update(s, v[i], static_cast<int>(i) + 1, patience);
                s = next;
                if (stop) {
                    got_stop = static_cast<int>(i) + 1;
                    break;
                }
            }
            CHECK(got_stop == want_stop);
            CHECK(s.best_epoch == want_best);
        }
    }
}

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.max_epochs = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_NOTHROW(c.validate(true));
    c = TrainConfig{};
    c.lr_generator = -1;
    try {
        c.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("train.lr_generator") != std::string::npos);
    }
    CHECK(TrainConfig{}.finetune_lr == 1e-5);
    CHECK(TrainConfig{}.batch_size == 16);
}

TEST_CASE("adam keeps float32 parameters and descends") {
    ParameterSet p;
    p.add("w", {3});
    p[0].values = {1.0, -2.0, 0.5};
    ParameterSet g = p.zeros_like();
    Adam opt(p, 0.1, 0.9, 0.999);
    for (int i = 0; i < 50; ++i) {
        for (std::size_t k = 0; k < 3; ++k) g[0].values[k] = 2.0 * p[0].values[k];
        opt.step(p, g);
        for (double v : p[0].values) CHECK(static_cast<double>(static_cast<float>(v)) == v);
    }
    CHECK(opt.steps == 50);
    double norm = 0;
    for (double v : p[0].values) norm += v * v;
    CHECK(norm < 0.5);
}

TEST_CASE("checkpoint round trip") {
    const auto gcfg = fixture::toy_generator();
    const auto dcfg = fixture::toy_discriminator();
    Checkpoint c;
    c.generator_config = gcfg;
    c.discriminator_config = dcfg;
    Generator g = build_generator(gcfg, 1);
    Discriminator d = build_discriminator(dcfg, 2);
    c.generator = g.parameters();
    c.discriminator = d.parameters();
    c.generator_optimizer = Adam(c.generator, 1e-4, 0.9, 0.999);
    c.discriminator_optimizer = Adam(c.discriminator, 2e-4, 0.5, 0.99);
    c.generator_optimizer.steps = 7;
    c.epoch = 4;
    c.monitor_value = 23.456789;
    c.config_hash = "deadbeefcafef00d";
    c.seed = 42;
    c.global_step = 123;
    const fs::path dir = fixture::fresh_dir("ckpt");
    save_checkpoint(c, dir / "c");
    const Checkpoint back = load_checkpoint(dir / "c");
    CHECK(max_abs_diff(back.generator, c.generator) <= 1e-7);
    CHECK(max_abs_diff(back.discriminator, c.discriminator) <= 1e-7);
    CHECK(back.generator_config == gcfg);
    CHECK(back.discriminator_config == dcfg);
    CHECK(back.epoch == 4);
    CHECK(back.monitor == "val_psnr");
    CHECK(back.monitor_value == 23.456789);
    CHECK(back.config_hash == c.config_hash);
    CHECK(back.seed == 42);
    CHECK(back.global_step == 123);
    CHECK(back.generator_optimizer.steps == 7);
    CHECK(back.discriminator_optimizer.lr == 2e-4);
    CHECK(back.discriminator_optimizer.beta1 == 0.5);

    const Tensor lr = oracle::random_tensor({1, 3, 8, 8}, 3);
    const Tensor a = g.forward(lr, DropoutMode::disabled());
    const Tensor b = Generator(back.generator_config, back.generator).forward(lr, DropoutMode::disabled());
    double diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    CHECK(diff <= 1e-7);

    // a truncated weights file is detected
    fs::copy(dir / "c", dir / "t", fs::copy_options::recursive);
    fs::resize_file(dir / "t" / "weights.bin", fs::file_size(dir / "t" / "weights.bin") / 2);
    CHECK_THROWS_AS(load_checkpoint(dir / "t"), IntegrityError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing"), IoError);

    CHECK(architecture_hash(gcfg, dcfg) == architecture_hash(back.generator_config, back.discriminator_config));
    auto other = gcfg;
    other.base_channels = 8;
    CHECK(architecture_hash(gcfg, dcfg) != architecture_hash(other, dcfg));
}

TEST_CASE("generator objective gradients match finite differences") {
    GeneratorConfig gcfg;
    gcfg.base_channels = 2;
    gcfg.num_rrdb = 1;
    gcfg.growth_channels = 1;
    gcfg.dense_blocks_per_rrdb = 1;
    const auto dcfg = fixture::toy_discriminator(32);
    const Generator gen = build_generator(gcfg, 5);
    const Discriminator disc = build_discriminator(dcfg, 6);
    const Tensor lr = oracle::random_tensor({2, 3, 8, 8}, 7);
    const Tensor hr = oracle::random_tensor({2, 3, 32, 32}, 8);
    const ThresholdSegmenter seg;
    const auto fx = make_random_conv_extractor(1234);
    const TrainingBackends backends{seg, *fx};
    const LossWeights w{0.7, 0.3, 0.05, 0.2};
    const auto mode = DropoutMode::stochastic(9);

    const auto obj = generator_objective(gen, disc, lr, hr, mode, w, backends);
    CHECK(obj.losses.total == doctest::Approx(w.pixel * obj.losses.pixel + w.perceptual * obj.losses.perceptual +
                                              w.adversarial * obj.losses.adversarial +
                                              w.semantic * obj.losses.semantic)
                                  .epsilon(1e-12));
    CHECK(obj.real_logits.size() == 2);

    // probe a handful of parameters spread over the network
    const auto flat = gen.parameters().flatten();
    const auto grads = obj.grads.flatten();
    std::vector<std::size_t> probes;
    for (std::size_t i = 0; i < flat.size(); i += flat.size() / 23 + 1) probes.push_back(i);
    probes.push_back(flat.size() - 1);
    std::vector<double> analytic, numeric;
    for (std::size_t i : probes) {
        auto f = [&](const std::vector<double>& x) {
            auto p = flat;
            p[i] = x[0];
            Generator g2(gcfg, gen.parameters());
            g2.parameters().assign_flat(p);
            return generator_objective(g2, disc, lr, hr, mode, w, backends, false).losses.total;
        };
        numeric.push_back(oracle::numeric_gradient(f, {flat[i]}, 1e-5)[0]);
        analytic.push_back(grads[i]);
    }
    CHECK(oracle::relative_error(analytic, numeric) < 1e-4);
}

TEST_CASE("training on toy data") {
    const auto manifest_path = fixture::toy_dataset("train_toy", 12, 32, 3);
    const Manifest m = load_manifest(manifest_path);
    const ThresholdSegmenter seg;
    const auto fx = make_random_conv_extractor(1234);
    const TrainingBackends backends{seg, *fx};
    const auto gcfg = fixture::toy_generator();
    const auto dcfg = fixture::toy_discriminator();

    SUBCASE("pixel-only step lowers the pixel loss") {
        const Generator gen = build_generator(gcfg, 1);
        const Discriminator disc = build_discriminator(dcfg, 2);
        const auto pairs = load_split(m, "train");
        Tensor lr({2, 3, 8, 8}), hr({2, 3, 32, 32});
        for (int n = 0; n < 2; ++n) {
            std::copy(pairs[n].lr.values().begin(), pairs[n].lr.values().end(), lr.values().begin() + n * 192);
            std::copy(pairs[n].hr.values().begin(), pairs[n].hr.values().end(), hr.values().begin() + n * 3072);
        }
        const LossWeights pix{1, 0, 0, 0};
        const auto before = generator_objective(gen, disc, lr, hr, DropoutMode::disabled(), pix, backends);
        Generator next = gen;
        Adam opt(next.parameters(), 1e-4, 0.9, 0.999);
        opt.step(next.parameters(), before.grads);
        const auto after = generator_objective(next, disc, lr, hr, DropoutMode::disabled(), pix, backends, false);
        CHECK(after.losses.pixel < before.losses.pixel);
    }

    SUBCASE("deterministic history and best checkpoint") {
        const auto cfg = quick_config(2);
        const auto r1 = train(gcfg, dcfg, cfg, m, backends, "h");
        const auto r2 = train(gcfg, dcfg, cfg, m, backends, "h");
        REQUIRE(r1.history.size() == 2);
        REQUIRE(r2.history.size() == 2);
        for (std::size_t e = 0; e < 2; ++e) {
            CHECK(r1.history[e].generator.total == r2.history[e].generator.total);
            CHECK(r1.history[e].monitor_value == r2.history[e].monitor_value);
            CHECK(r1.history[e].steps == 3);
        }
        CHECK(r1.steps == 6);
        CHECK(max_abs_diff(r1.best.generator, r2.best.generator) == 0.0);
        CHECK(r1.best.epoch == r1.best_epoch);
        CHECK(r1.best.monitor_value == r1.history[r1.best_epoch - 1].monitor_value);
        CHECK(r1.best.generator.all_finite());
        CHECK(history_to_json(r1.history) == history_to_json(r2.history));
    }

    SUBCASE("max_steps caps the run") {
        auto cfg = quick_config(5);
        cfg.max_steps = 4;
        const auto r = train(gcfg, dcfg, cfg, m, backends, "h");
        CHECK(r.steps == 4);
        CHECK(r.epochs_run == 2);
    }

    SUBCASE("fine-tuning") {
        const auto base = train(gcfg, dcfg, quick_config(1), m, backends, "h");
        const Tensor probe = oracle::random_tensor({1, 3, 8, 8}, 4);
        const Tensor before = Generator(gcfg, base.best.generator).forward(probe, DropoutMode::disabled());

        const auto zero = finetune(base.best, gcfg, dcfg, quick_config(0), m, backends, "h");
        const Tensor same = Generator(gcfg, zero.best.generator).forward(probe, DropoutMode::disabled());
        CHECK(zero.epochs_run == 0);
        for (std::size_t i = 0; i < same.size(); ++i) CHECK(same[i] == before[i]);
        CHECK(zero.best.generator_optimizer.lr == 1e-5);
        CHECK(zero.best.discriminator_optimizer.lr == 1e-5);

        const auto one = finetune(base.best, gcfg, dcfg, quick_config(1), m, backends, "h");
        CHECK(one.history.size() == 1);
        CHECK(max_abs_diff(one.best.generator, base.best.generator) > 0.0);

        auto wrong = gcfg;
        wrong.num_rrdb = 2;
        CHECK_THROWS_AS(finetune(base.best, wrong, dcfg, quick_config(0), m, backends, "h"), IncompatibilityError);
    }

    SUBCASE("empty training split is rejected") {
        Manifest empty = m;
        empty.train.clear();
        CHECK_THROWS_AS(train(gcfg, dcfg, quick_config(1), empty, backends, "h"), ConfigError);
    }
}
