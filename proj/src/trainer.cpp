#include "suesr/trainer.hpp"

#include <cmath>
#include <numeric>

#include <json.hpp>

#include "suesr/errors.hpp"
#include "suesr/metrics.hpp"
#include "suesr/rng.hpp"
#include "suesr/run_config.hpp"
#include "suesr/tensor_store.hpp"

namespace suesr {

using nlohmann::json;

namespace {

constexpr std::uint64_t kGeneratorInitStream = 1;
constexpr std::uint64_t kDiscriminatorInitStream = 2;
constexpr std::uint64_t kShuffleStream = 3;
constexpr std::uint64_t kDropoutStream = 4;

const std::string kGeneratorPrefix = "generator/";
const std::string kDiscriminatorPrefix = "discriminator/";
const std::string kOptimizerPrefix = "optimizer/";

json monitor_to_json(double v) {
    if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
    return json(v);
}

double monitor_from_json(const json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        throw IntegrityError("bad monitor value '" + s + "'");
    }
    return j.get<double>();
}

void add_prefixed(ParameterSet& dst, const ParameterSet& src, const std::string& prefix) {
    for (const auto& a : src) {
        const auto i = dst.add(prefix + a.name, a.shape);
        dst[i].values = a.values;
    }
}

ParameterSet take_prefixed(const ParameterSet& src, const std::string& prefix) {
    ParameterSet out;
    for (const auto& a : src) {
        if (a.name.compare(0, prefix.size(), prefix) != 0) continue;
        const std::string rest = a.name.substr(prefix.size());
        const auto i = out.add(rest, a.shape);
        out[i].values = a.values;
    }
    return out;
}

void require_layout(const ParameterSet& expected, const ParameterSet& actual, const std::string& what) {
    if (!expected.same_layout(actual)) {
        throw IntegrityError("checkpoint " + what + " does not match the recorded architecture");
    }
}

json adam_meta(const Adam& a) {
    return json{{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"epsilon", a.epsilon}, {"steps", a.steps}};
}

Adam adam_from_meta(const json& j, ParameterSet m, ParameterSet v) {
    Adam a;
    a.lr = j.at("lr").get<double>();
    a.beta1 = j.at("beta1").get<double>();
    a.beta2 = j.at("beta2").get<double>();
    a.epsilon = j.at("epsilon").get<double>();
    a.steps = j.at("steps").get<long>();
    a.m = std::move(m);
    a.v = std::move(v);
    return a;
}

struct Batch {
    Tensor lr;
    Tensor hr;
};

Batch load_batch(const Manifest& manifest, const std::vector<ManifestEntry>& entries,
                 const std::vector<std::size_t>& order, std::size_t begin, std::size_t end) {
    std::vector<Tensor> lrs, hrs;
    for (std::size_t i = begin; i < end; ++i) {
        ImagePair p = load_pair(manifest, entries[order[i]]);
        lrs.push_back(std::move(p.lr));
        hrs.push_back(std::move(p.hr));
    }
    return {stack(lrs), stack(hrs)};
}

/// Objective and gradients given an SR batch already produced with `tape`.
GeneratorObjective objective_from_forward(const Generator& gen, const Discriminator& disc, const GeneratorTape* tape,
                                          const Tensor& sr, const Tensor& hr, const LossWeights& weights,
                                          const TrainingBackends& backends) {
    GeneratorObjective out;
    const Tensor real_logits = disc.forward(hr);
    DiscriminatorTape fake_tape;
    const Tensor fake_logits = disc.forward(sr, tape ? &fake_tape : nullptr);
    out.real_logits.assign(real_logits.values().begin(), real_logits.values().end());
    out.fake_logits.assign(fake_logits.values().begin(), fake_logits.values().end());
    const Tensor p_sr = backends.segmenter.probabilities(sr);
    const Tensor p_hr = backends.segmenter.probabilities(hr);
    GeneratorLossGradients g;
    out.losses = composite_generator_loss(sr, hr, out.real_logits, out.fake_logits, p_sr, p_hr, weights,
                                          backends.features, tape ? &g : nullptr);
    if (tape) {
        Tensor grad_sr = std::move(g.sr);
        Tensor grad_logits({static_cast<int>(g.fake_logits.size())}, g.fake_logits);
        add_scaled(grad_sr, disc.backward(fake_tape, grad_logits, nullptr));
        add_scaled(grad_sr, backends.segmenter.probabilities_vjp(sr, g.p_sr));
        out.grads = gen.parameters().zeros_like();
        gen.backward(*tape, grad_sr, out.grads);
    }
    return out;
}

double discriminator_step(Discriminator& disc, Adam& opt, const Tensor& sr, const Tensor& hr) {
    DiscriminatorTape real_tape, fake_tape;
    const Tensor real = disc.forward(hr, &real_tape);
    const Tensor fake = disc.forward(sr, &fake_tape);
    std::vector<double> g_real, g_fake;
    const double loss = ragan_discriminator_loss(real.values(), fake.values(), &g_real, &g_fake);
    ParameterSet grads = disc.parameters().zeros_like();
    disc.backward(real_tape, Tensor({static_cast<int>(g_real.size())}, g_real), &grads);
    disc.backward(fake_tape, Tensor({static_cast<int>(g_fake.size())}, g_fake), &grads);
    opt.step(disc.parameters(), grads);
    return loss;
}

Checkpoint snapshot(const Generator& gen, const Discriminator& disc, const Adam& g_opt, const Adam& d_opt, int epoch,
                    const TrainConfig& config, double monitor_value, const std::string& config_hash, long step) {
    Checkpoint c;
    c.generator_config = gen.config();
    c.discriminator_config = disc.config();
    c.generator = gen.parameters();
    c.discriminator = disc.parameters();
    c.generator_optimizer = g_opt;
    c.discriminator_optimizer = d_opt;
    c.epoch = epoch;
    c.monitor = config.monitor;
    c.monitor_value = monitor_value;
    c.config_hash = config_hash;
    c.seed = config.seed;
    c.global_step = step;
    return c;
}

TrainingResult run_loop(Generator gen, Discriminator disc, Adam g_opt, Adam d_opt, const TrainConfig& config,
                        const Manifest& manifest, const TrainingBackends& backends, const std::string& config_hash,
                        const EpochCallback& on_epoch) {
    const auto& entries = manifest.split("train");
    if (config.max_epochs > 0) {
        if (entries.empty()) throw ConfigError("data.manifest", "train split is empty");
        if (manifest.split("val").empty()) throw ConfigError("data.manifest", "val split is empty");
    }
    TrainingResult result;
    result.best = snapshot(gen, disc, g_opt, d_opt, 0, config, -std::numeric_limits<double>::infinity(), config_hash, 0);
    EarlyStopState stop_state;
    long step = 0;
    const auto batch = static_cast<std::size_t>(config.batch_size);
    const LossWeights pretrain_weights{1.0, 0.0, 0.0, 0.0};

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::vector<std::size_t> order(entries.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed(derive_seed(config.seed, kShuffleStream), static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order.begin(), order.end());

        const bool pretrain = epoch <= config.pretrain_epochs;
        EpochRecord record;
        record.epoch = epoch;
        bool capped = false;
        for (std::size_t begin = 0; begin < order.size(); begin += batch) {
            if (config.max_steps > 0 && step >= config.max_steps) {
                capped = true;
                break;
            }
            const Batch b = load_batch(manifest, entries, order, begin, std::min(order.size(), begin + batch));
            const auto mode = DropoutMode::stochastic(derive_seed(derive_seed(config.seed, kDropoutStream),
                                                                  static_cast<std::uint64_t>(step)));
            GeneratorTape tape;
            const Tensor sr = gen.forward(b.lr, mode, &tape);
            double d_loss = 0.0;
            if (!pretrain) d_loss = discriminator_step(disc, d_opt, sr, b.hr);
            GeneratorObjective obj = objective_from_forward(gen, disc, &tape, sr, b.hr,
                                                            pretrain ? pretrain_weights : config.weights, backends);
            if (!std::isfinite(obj.losses.total) || !std::isfinite(d_loss)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                   std::to_string(step));
            }
            g_opt.step(gen.parameters(), obj.grads);
            ++step;
            ++record.steps;
            record.generator.pixel += obj.losses.pixel;
            record.generator.perceptual += obj.losses.perceptual;
            record.generator.adversarial += obj.losses.adversarial;
            record.generator.semantic += obj.losses.semantic;
            record.generator.total += obj.losses.total;
            record.discriminator += d_loss;
        }
        if (record.steps > 0) {
            const double n = static_cast<double>(record.steps);
            record.generator.pixel /= n;
            record.generator.perceptual /= n;
            record.generator.adversarial /= n;
            record.generator.semantic /= n;
            record.generator.total /= n;
            record.discriminator /= n;
        }
        record.monitor_value = validation_psnr(gen, manifest, "val", config.batch_size);
        const auto [next, stop] = early_stop_update(stop_state, record.monitor_value, epoch, config.patience);
        record.improved = next.best_epoch == epoch;
        stop_state = next;
        if (record.improved) {
            result.best = snapshot(gen, disc, g_opt, d_opt, epoch, config, record.monitor_value, config_hash, step);
            result.best_epoch = epoch;
        }
        result.history.push_back(record);
        result.epochs_run = epoch;
        result.steps = step;
        if (on_epoch) on_epoch(record);
        if (stop) {
            result.stopped_early = true;
            break;
        }
        if (capped || (config.max_steps > 0 && step >= config.max_steps)) break;
    }
    return result;
}

}  // namespace

void TrainConfig::validate(bool allow_zero_epochs) const {
    if (max_epochs < (allow_zero_epochs ? 0 : 1)) throw ConfigError("train.max_epochs", "must be at least 1");
    if (patience < 1) throw ConfigError("train.patience", "must be at least 1");
    if (batch_size < 1) throw ConfigError("train.batch_size", "must be at least 1");
    if (!(lr_generator > 0.0) || !std::isfinite(lr_generator)) throw ConfigError("train.lr_generator", "must be > 0");
    if (!(lr_discriminator > 0.0) || !std::isfinite(lr_discriminator)) {
        throw ConfigError("train.lr_discriminator", "must be > 0");
    }
    if (!(finetune_lr > 0.0) || !std::isfinite(finetune_lr)) throw ConfigError("train.finetune_lr", "must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1", "must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2", "must be in [0, 1)");
    if (!(adam_epsilon > 0.0)) throw ConfigError("train.adam_epsilon", "must be > 0");
    if (monitor != "val_psnr") throw ConfigError("train.monitor", "only \"val_psnr\" is supported");
    if (pretrain_epochs < 0) throw ConfigError("train.pretrain_epochs", "must be >= 0");
    if (max_steps < 0) throw ConfigError("train.max_steps", "must be >= 0");
    weights.validate();
}

std::pair<EarlyStopState, bool> early_stop_update(const EarlyStopState& state, double value, int epoch, int patience) {
    EarlyStopState next = state;
    if (value > state.best_value) {
        next.best_value = value;
        next.best_epoch = epoch;
        next.epochs_since_improvement = 0;
    } else {
        ++next.epochs_since_improvement;
    }
    return {next, next.epochs_since_improvement == patience};
}

Adam::Adam(const ParameterSet& layout, double lr_, double beta1_, double beta2_, double epsilon_)
    : lr(lr_), beta1(beta1_), beta2(beta2_), epsilon(epsilon_), m(layout.zeros_like()), v(layout.zeros_like()) {}

void Adam::step(ParameterSet& params, const ParameterSet& grads) {
    if (!params.same_layout(grads) || !params.same_layout(m)) {
        throw ShapeError("optimizer state does not match the parameter layout");
    }
    ++steps;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    for (std::size_t a = 0; a < params.size(); ++a) {
        auto& p = params[a].values;
        const auto& g = grads[a].values;
        auto& ma = m[a].values;
        auto& va = v[a].values;
        for (std::size_t i = 0; i < p.size(); ++i) {
            ma[i] = beta1 * ma[i] + (1.0 - beta1) * g[i];
            va[i] = beta2 * va[i] + (1.0 - beta2) * g[i] * g[i];
            p[i] -= lr * (ma[i] / c1) / (std::sqrt(va[i] / c2) + epsilon);
        }
    }
    params.round_to_float32();
    m.round_to_float32();
    v.round_to_float32();
}

std::string architecture_hash(const GeneratorConfig& g, const DiscriminatorConfig& d) {
    const json doc{{"generator", generator_config_to_json(g)}, {"discriminator", discriminator_config_to_json(d)}};
    return fnv1a_hex(doc.dump());
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    ParameterSet store;
    add_prefixed(store, c.generator, kGeneratorPrefix);
    add_prefixed(store, c.discriminator, kDiscriminatorPrefix);
    add_prefixed(store, c.generator_optimizer.m, kOptimizerPrefix + "generator/m/");
    add_prefixed(store, c.generator_optimizer.v, kOptimizerPrefix + "generator/v/");
    add_prefixed(store, c.discriminator_optimizer.m, kOptimizerPrefix + "discriminator/m/");
    add_prefixed(store, c.discriminator_optimizer.v, kOptimizerPrefix + "discriminator/v/");
    write_tensor_store(dir, store);

    json meta;
    meta["epoch"] = c.epoch;
    meta["monitor"] = c.monitor;
    meta["monitor_value"] = monitor_to_json(c.monitor_value);
    meta["config_hash"] = c.config_hash;
    meta["architecture_hash"] = architecture_hash(c.generator_config, c.discriminator_config);
    meta["generator"] = generator_config_to_json(c.generator_config);
    meta["discriminator"] = discriminator_config_to_json(c.discriminator_config);
    meta["optimizer"] = {{"generator", adam_meta(c.generator_optimizer)},
                         {"discriminator", adam_meta(c.discriminator_optimizer)}};
    meta["rng"] = {{"seed", c.seed}, {"global_step", c.global_step}};
    meta["weights_hash"] = fnv1a_hex(read_file(dir / "weights.bin"));
    write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / "meta.json")) throw IoError("no checkpoint at " + dir.string());
    const ParameterSet store = read_tensor_store(dir);
    Checkpoint c;
    try {
        const json meta = json::parse(read_file(dir / "meta.json"));
        if (meta.at("weights_hash").get<std::string>() != fnv1a_hex(read_file(dir / "weights.bin"))) {
            throw IntegrityError("weights.bin does not match the hash recorded in meta.json");
        }
        c.generator_config = generator_config_from_json(meta.at("generator"));
        c.discriminator_config = discriminator_config_from_json(meta.at("discriminator"));
        c.epoch = meta.at("epoch").get<int>();
        c.monitor = meta.at("monitor").get<std::string>();
        c.monitor_value = monitor_from_json(meta.at("monitor_value"));
        c.config_hash = meta.at("config_hash").get<std::string>();
        c.seed = meta.at("rng").at("seed").get<std::uint64_t>();
        c.global_step = meta.at("rng").at("global_step").get<long>();
        c.generator = take_prefixed(store, kGeneratorPrefix);
        c.discriminator = take_prefixed(store, kDiscriminatorPrefix);
        c.generator_optimizer = adam_from_meta(meta.at("optimizer").at("generator"),
                                               take_prefixed(store, kOptimizerPrefix + "generator/m/"),
                                               take_prefixed(store, kOptimizerPrefix + "generator/v/"));
        c.discriminator_optimizer = adam_from_meta(meta.at("optimizer").at("discriminator"),
                                                   take_prefixed(store, kOptimizerPrefix + "discriminator/m/"),
                                                   take_prefixed(store, kOptimizerPrefix + "discriminator/v/"));
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("malformed checkpoint metadata: ") + e.what());
    } catch (const ConfigError& e) {
        throw IntegrityError(std::string("checkpoint metadata: ") + e.what());
    }
    const ParameterSet g_layout = Generator(c.generator_config).parameters();
    const ParameterSet d_layout = Discriminator(c.discriminator_config).parameters();
    require_layout(g_layout, c.generator, "generator");
    require_layout(d_layout, c.discriminator, "discriminator");
    require_layout(g_layout, c.generator_optimizer.m, "generator optimizer state");
    require_layout(g_layout, c.generator_optimizer.v, "generator optimizer state");
    require_layout(d_layout, c.discriminator_optimizer.m, "discriminator optimizer state");
    require_layout(d_layout, c.discriminator_optimizer.v, "discriminator optimizer state");
    if (!c.generator.all_finite() || !c.discriminator.all_finite()) {
        throw IntegrityError("checkpoint contains non-finite parameters");
    }
    return c;
}

std::string history_to_json(const std::vector<EpochRecord>& history) {
    json doc = json::array();
    for (const auto& r : history) {
        doc.push_back({{"epoch", r.epoch},
                       {"steps", r.steps},
                       {"generator",
                        {{"pixel", r.generator.pixel},
                         {"perceptual", r.generator.perceptual},
                         {"adversarial", r.generator.adversarial},
                         {"semantic", r.generator.semantic},
                         {"total", r.generator.total}}},
                       {"discriminator", r.discriminator},
                       {"val_psnr", monitor_to_json(r.monitor_value)},
                       {"improved", r.improved}});
    }
    return doc.dump(2) + "\n";
}

GeneratorObjective generator_objective(const Generator& gen, const Discriminator& disc, const Tensor& lr_batch,
                                       const Tensor& hr_batch, const DropoutMode& mode, const LossWeights& weights,
                                       const TrainingBackends& backends, bool want_grads) {
    GeneratorTape tape;
    const Tensor sr = gen.forward(lr_batch, mode, want_grads ? &tape : nullptr);
    return objective_from_forward(gen, disc, want_grads ? &tape : nullptr, sr, hr_batch, weights, backends);
}

double validation_psnr(const Generator& gen, const Manifest& manifest, const std::string& split, int batch_size) {
    const auto& entries = manifest.split(split);
    if (entries.empty()) throw ConfigError("data.manifest", split + " split is empty");
    std::vector<std::size_t> order(entries.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    double total = 0.0;
    const auto batch = static_cast<std::size_t>(std::max(batch_size, 1));
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
        const std::size_t end = std::min(order.size(), begin + batch);
        const Batch b = load_batch(manifest, entries, order, begin, end);
        const Tensor sr = gen.forward(b.lr, DropoutMode::disabled());
        for (std::size_t i = 0; i < end - begin; ++i) {
            const int n = static_cast<int>(i);
            total += psnr(clamp01(batch_item(sr, n)), batch_item(b.hr, n));
        }
    }
    return total / static_cast<double>(entries.size());
}

TrainingResult train(const GeneratorConfig& gen_config, const DiscriminatorConfig& disc_config,
                     const TrainConfig& config, const Manifest& manifest, const TrainingBackends& backends,
                     const std::string& config_hash, const EpochCallback& on_epoch) {
    config.validate();
    Generator gen = build_generator(gen_config, derive_seed(config.seed, kGeneratorInitStream));
    Discriminator disc = build_discriminator(disc_config, derive_seed(config.seed, kDiscriminatorInitStream));
    Adam g_opt(gen.parameters(), config.lr_generator, config.beta1, config.beta2, config.adam_epsilon);
    Adam d_opt(disc.parameters(), config.lr_discriminator, config.beta1, config.beta2, config.adam_epsilon);
    return run_loop(std::move(gen), std::move(disc), std::move(g_opt), std::move(d_opt), config, manifest, backends,
                    config_hash, on_epoch);
}

TrainingResult finetune(const Checkpoint& source, const GeneratorConfig& gen_config,
                        const DiscriminatorConfig& disc_config, const TrainConfig& config, const Manifest& manifest,
                        const TrainingBackends& backends, const std::string& config_hash,
                        const EpochCallback& on_epoch) {
    config.validate(true);
    if (architecture_hash(gen_config, disc_config) !=
        architecture_hash(source.generator_config, source.discriminator_config)) {
        throw IncompatibilityError("checkpoint architecture does not match the run configuration");
    }
    if (manifest.train.empty() && manifest.val.empty() && manifest.test.empty()) {
        throw ConfigError("data.manifest", "fine-tuning manifest is empty");
    }
    Generator gen(source.generator_config, source.generator);
    Discriminator disc(source.discriminator_config, source.discriminator);
    Adam g_opt(gen.parameters(), config.finetune_lr, config.beta1, config.beta2, config.adam_epsilon);
    Adam d_opt(disc.parameters(), config.finetune_lr, config.beta1, config.beta2, config.adam_epsilon);
    return run_loop(std::move(gen), std::move(disc), std::move(g_opt), std::move(d_opt), config, manifest, backends,
                    config_hash, on_epoch);
}

}  // namespace suesr
