#include "suesr/run_config.hpp"

#include <cerrno>
#include <cstdlib>
#include <set>

#include "suesr/errors.hpp"
#include "suesr/features.hpp"
#include "suesr/semantics.hpp"
#include "suesr/tensor_store.hpp"

namespace suesr {

using nlohmann::json;

namespace {

/// Reads the keys of one JSON object, remembering which were consumed so
/// that leftovers can be reported as unknown.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
    }

    template <typename T>
    bool read(const std::string& key, T& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return false;
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            throw ConfigError(field(key), "has the wrong type");
        }
        return true;
    }

    const json* child(const std::string& key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (const auto& item : j_.items()) {
            if (!seen_.count(item.key())) throw ConfigError(field(item.key()), "unknown key");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_generator(Section& s, GeneratorConfig& c) {
    s.read("in_channels", c.in_channels);
    s.read("base_channels", c.base_channels);
    s.read("num_rrdb", c.num_rrdb);
    s.read("growth_channels", c.growth_channels);
    s.read("dense_blocks_per_rrdb", c.dense_blocks_per_rrdb);
    s.read("dropout_rate", c.dropout_rate);
    s.read("scale_factor", c.scale_factor);
    s.read("residual_scaling", c.residual_scaling);
}

void read_discriminator(Section& s, DiscriminatorConfig& c) {
    s.read("in_channels", c.in_channels);
    s.read("patch_size", c.patch_size);
    s.read("base_channels", c.base_channels);
    s.read("num_stages", c.num_stages);
    s.read("hidden_units", c.hidden_units);
}

}  // namespace

json generator_config_to_json(const GeneratorConfig& c) {
    return json{{"in_channels", c.in_channels},
                {"base_channels", c.base_channels},
                {"num_rrdb", c.num_rrdb},
                {"growth_channels", c.growth_channels},
                {"dense_blocks_per_rrdb", c.dense_blocks_per_rrdb},
                {"dropout_rate", c.dropout_rate},
                {"scale_factor", c.scale_factor},
                {"residual_scaling", c.residual_scaling}};
}

GeneratorConfig generator_config_from_json(const json& j) {
    GeneratorConfig c;
    Section s(j, "model");
    read_generator(s, c);
    s.finish();
    c.validate();
    return c;
}

json discriminator_config_to_json(const DiscriminatorConfig& c) {
    return json{{"in_channels", c.in_channels},
                {"patch_size", c.patch_size},
                {"base_channels", c.base_channels},
                {"num_stages", c.num_stages},
                {"hidden_units", c.hidden_units}};
}

DiscriminatorConfig discriminator_config_from_json(const json& j) {
    DiscriminatorConfig c;
    Section s(j, "model.discriminator");
    read_discriminator(s, c);
    s.finish();
    c.validate();
    return c;
}

void RunConfig::validate(bool allow_zero_epochs) const {
    generator.validate();
    discriminator.validate();
    train.validate(allow_zero_epochs);
    data.fractions.validate();
    if (data.hr_size < 8 * kScaleFactor || data.hr_size % kScaleFactor != 0) {
        throw ConfigError("data.hr_size", "must be a multiple of 4 and at least 32");
    }
    if (discriminator.patch_size != data.hr_size) {
        throw ConfigError("model.discriminator.patch_size", "must equal data.hr_size");
    }
    try {
        validate_feature_backend_spec(feature_backend);
    } catch (const Error& e) {
        throw ConfigError("loss.feature_backend", e.what());
    }
    try {
        validate_segmenter_spec(segmenter);
    } catch (const Error& e) {
        throw ConfigError("loss.segmenter", e.what());
    }
    try {
        validate_feature_backend_spec(metrics.feature_backend);
    } catch (const Error& e) {
        throw ConfigError("metrics.feature_backend", e.what());
    }
    if (metrics.mode != "deterministic" && metrics.mode != "mc") {
        throw ConfigError("metrics.mode", "must be \"deterministic\" or \"mc\"");
    }
    if (metrics.mc_passes < 1) throw ConfigError("metrics.mc_passes", "must be at least 1");
    if (infer.mc_passes < 1) throw ConfigError("infer.mc_passes", "must be at least 1");
    if (infer.workers < 1) throw ConfigError("infer.workers", "must be at least 1");
}

json RunConfig::to_json() const {
    json model = generator_config_to_json(generator);
    model["discriminator"] = discriminator_config_to_json(discriminator);
    return json{
        {"data",
         {{"root", data.root},
          {"manifest", data.manifest},
          {"hr_size", data.hr_size},
          {"fractions", {{"train", data.fractions.train}, {"val", data.fractions.val}, {"test", data.fractions.test}}},
          {"seed", data.seed}}},
        {"model", model},
        {"loss",
         {{"w_pixel", train.weights.pixel},
          {"w_perceptual", train.weights.perceptual},
          {"w_adversarial", train.weights.adversarial},
          {"w_semantic", train.weights.semantic},
          {"feature_backend", feature_backend},
          {"segmenter", segmenter}}},
        {"train",
         {{"max_epochs", train.max_epochs},
          {"patience", train.patience},
          {"batch_size", train.batch_size},
          {"lr_generator", train.lr_generator},
          {"lr_discriminator", train.lr_discriminator},
          {"finetune_lr", train.finetune_lr},
          {"beta1", train.beta1},
          {"beta2", train.beta2},
          {"adam_epsilon", train.adam_epsilon},
          {"seed", train.seed},
          {"monitor", train.monitor},
          {"pretrain_epochs", train.pretrain_epochs},
          {"max_steps", train.max_steps}}},
        {"metrics",
         {{"feature_backend", metrics.feature_backend},
          {"mode", metrics.mode},
          {"mc_passes", metrics.mc_passes},
          {"write_csv", metrics.write_csv}}},
        {"infer", {{"mc_passes", infer.mc_passes}, {"seed", infer.seed}, {"workers", infer.workers}}}};
}

std::string RunConfig::canonical_json() const { return to_json().dump(); }

std::string RunConfig::hash() const { return fnv1a_hex(canonical_json()); }

RunConfig parse_run_config(const std::string& text, std::uint64_t default_seed) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError("<root>", std::string("not valid JSON: ") + e.what());
    }
    RunConfig c;
    c.data.seed = default_seed;
    c.train.seed = default_seed;
    c.infer.seed = default_seed;
    Section root(doc, "");
    if (const json* j = root.child("data")) {
        Section s(*j, "data");
        s.read("root", c.data.root);
        s.read("manifest", c.data.manifest);
        s.read("hr_size", c.data.hr_size);
        s.read("seed", c.data.seed);
        if (const json* f = s.child("fractions")) {
            Section fs(*f, "data.fractions");
            fs.read("train", c.data.fractions.train);
            fs.read("val", c.data.fractions.val);
            fs.read("test", c.data.fractions.test);
            fs.finish();
        }
        s.finish();
    }
    if (const json* j = root.child("model")) {
        Section s(*j, "model");
        read_generator(s, c.generator);
        if (const json* d = s.child("discriminator")) {
            Section ds(*d, "model.discriminator");
            read_discriminator(ds, c.discriminator);
            ds.finish();
        }
        s.finish();
    }
    if (const json* j = root.child("loss")) {
        Section s(*j, "loss");
        s.read("w_pixel", c.train.weights.pixel);
        s.read("w_perceptual", c.train.weights.perceptual);
        s.read("w_adversarial", c.train.weights.adversarial);
        s.read("w_semantic", c.train.weights.semantic);
        s.read("feature_backend", c.feature_backend);
        s.read("segmenter", c.segmenter);
        s.finish();
    }
    if (const json* j = root.child("train")) {
        Section s(*j, "train");
        s.read("max_epochs", c.train.max_epochs);
        s.read("patience", c.train.patience);
        s.read("batch_size", c.train.batch_size);
        s.read("lr_generator", c.train.lr_generator);
        s.read("lr_discriminator", c.train.lr_discriminator);
        s.read("finetune_lr", c.train.finetune_lr);
        s.read("beta1", c.train.beta1);
        s.read("beta2", c.train.beta2);
        s.read("adam_epsilon", c.train.adam_epsilon);
        s.read("seed", c.train.seed);
        s.read("monitor", c.train.monitor);
        s.read("pretrain_epochs", c.train.pretrain_epochs);
        s.read("max_steps", c.train.max_steps);
        s.finish();
    }
    if (const json* j = root.child("metrics")) {
        Section s(*j, "metrics");
        s.read("feature_backend", c.metrics.feature_backend);
        s.read("mode", c.metrics.mode);
        s.read("mc_passes", c.metrics.mc_passes);
        s.read("write_csv", c.metrics.write_csv);
        s.finish();
    }
    if (const json* j = root.child("infer")) {
        Section s(*j, "infer");
        s.read("mc_passes", c.infer.mc_passes);
        s.read("seed", c.infer.seed);
        s.read("workers", c.infer.workers);
        s.finish();
    }
    root.finish();
    c.validate();
    return c;
}

std::uint64_t env_seed() {
    const char* v = std::getenv("SUESR_SEED");
    if (v == nullptr || *v == '\0') return 0;
    char* end = nullptr;
    errno = 0;
    const unsigned long long seed = std::strtoull(v, &end, 10);
    if (errno != 0 || *end != '\0' || *v == '-') throw ConfigError("SUESR_SEED", "must be a non-negative integer");
    return seed;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path.string());
    return parse_run_config(read_file(path), env_seed());
}

}  // namespace suesr
