#include "suesr/networks.hpp"

#include <cmath>

#include "suesr/errors.hpp"
#include "suesr/rng.hpp"

namespace suesr {

namespace {

constexpr double kDenseBlockInitGain = 0.1;
constexpr int kConvsPerDenseBlock = 5;
constexpr int kMinLrExtent = 8;

void scale_inplace(Tensor& t, double s) {
    for (double& v : t.values()) v *= s;
}

Tensor multiply(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

}  // namespace

void GeneratorConfig::validate() const {
    if (in_channels < 1) throw ConfigError("model.in_channels", "must be >= 1");
    if (base_channels < 1) throw ConfigError("model.base_channels", "must be >= 1");
    if (num_rrdb < 1) throw ConfigError("model.num_rrdb", "must be >= 1");
    if (growth_channels < 1) throw ConfigError("model.growth_channels", "must be >= 1");
    if (dense_blocks_per_rrdb < 1) throw ConfigError("model.dense_blocks_per_rrdb", "must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("model.dropout_rate", "must lie in [0, 1)");
    if (scale_factor != 4) throw ConfigError("model.scale_factor", "only x4 (two x2 stages) is supported");
    if (!(residual_scaling > 0.0 && residual_scaling <= 1.0)) {
        throw ConfigError("model.residual_scaling", "must lie in (0, 1]");
    }
}

void DiscriminatorConfig::validate() const {
    if (in_channels < 1) throw ConfigError("model.discriminator.in_channels", "must be >= 1");
    if (base_channels < 1) throw ConfigError("model.discriminator.base_channels", "must be >= 1");
    if (num_stages < 1 || num_stages > 10) throw ConfigError("model.discriminator.num_stages", "must lie in [1, 10]");
    if (hidden_units < 1) throw ConfigError("model.discriminator.hidden_units", "must be >= 1");
    const int reduction = 1 << num_stages;
    if (patch_size < reduction || patch_size % reduction != 0) {
        throw ConfigError("model.discriminator.patch_size",
                          "must be a positive multiple of 2^num_stages = " + std::to_string(reduction));
    }
}

// ---------------------------------------------------------------------------
// Generator

Generator::Generator(const GeneratorConfig& config) : config_(config) {
    config_.validate();
    build_layers();
}

Generator::Generator(const GeneratorConfig& config, ParameterSet params) : Generator(config) {
    if (!params_.same_layout(params)) {
        throw IncompatibilityError("parameter set does not match the generator architecture");
    }
    params_ = std::move(params);
}

void Generator::build_layers() {
    const int c = config_.base_channels;
    const int g = config_.growth_channels;
    head_ = nn::Conv2d(params_, "head", {config_.in_channels, c, 3, 1, 1, 1});
    rrdbs_.clear();
    for (int r = 0; r < config_.num_rrdb; ++r) {
        Rrdb rrdb;
        for (int b = 0; b < config_.dense_blocks_per_rrdb; ++b) {
            DenseBlock block;
            for (int k = 0; k < kConvsPerDenseBlock; ++k) {
                const int out = (k + 1 == kConvsPerDenseBlock) ? c : g;
                const std::string name =
                    "rrdb" + std::to_string(r) + ".db" + std::to_string(b) + ".conv" + std::to_string(k);
                block.convs.emplace_back(params_, name, nn::ConvGeometry{c + k * g, out, 3, 1, 1, 1});
            }
            rrdb.blocks.push_back(std::move(block));
        }
        rrdbs_.push_back(std::move(rrdb));
    }
    trunk_ = nn::Conv2d(params_, "trunk", {c, c, 3, 1, 1, 1});
    up1_ = nn::Conv2d(params_, "up1", {c, 4 * c, 3, 1, 1, 1});
    up2_ = nn::Conv2d(params_, "up2", {c, 4 * c, 3, 1, 1, 1});
    tail_ = nn::Conv2d(params_, "tail", {c, 3, 3, 1, 1, 1});
}

std::vector<LayerInfo> Generator::layers() const {
    std::vector<LayerInfo> out;
    out.push_back({"head", "conv3x3"});
    out.push_back({"dropout", "dropout"});
    for (int r = 0; r < config_.num_rrdb; ++r) out.push_back({"rrdb" + std::to_string(r), "rrdb"});
    out.push_back({"trunk", "conv3x3"});
    out.push_back({"skip", "add"});
    for (const char* name : {"up1", "up2"}) {
        out.push_back({name, "conv3x3"});
        out.push_back({std::string(name) + ".shuffle", "pixel_shuffle"});
        out.push_back({std::string(name) + ".act", "leaky_relu"});
    }
    out.push_back({"tail", "conv3x3"});
    return out;
}

Tensor Generator::dropout_mask(const std::vector<int>& shape, const DropoutMode& mode) const {
    Tensor mask(shape, 1.0);
    const double p = config_.dropout_rate;
    if (!mode.is_stochastic() || p == 0.0) return mask;
    Rng rng(mode.seed());
    const double keep_scale = 1.0 / (1.0 - p);
    for (double& m : mask.values()) m = rng.uniform() < p ? 0.0 : keep_scale;
    return mask;
}

Tensor Generator::dense_block_forward(const DenseBlock& block, const Tensor& x, DenseBlockTape* tape) const {
    Tensor features = x;
    for (int k = 0; k + 1 < kConvsPerDenseBlock; ++k) {
        Tensor y = block.convs[static_cast<std::size_t>(k)].forward(params_, features);
        nn::leaky_relu_inplace(y);
        features = nn::concat_channels(features, y);
    }
    Tensor out = block.convs.back().forward(params_, features);
    scale_inplace(out, config_.residual_scaling);
    add_scaled(out, x);
    if (tape != nullptr) tape->features = std::move(features);
    return out;
}

Tensor Generator::dense_block_backward(const DenseBlock& block, const DenseBlockTape& tape, const Tensor& grad_out,
                                       ParameterSet& grads) const {
    const int c = config_.base_channels;
    const int g = config_.growth_channels;
    Tensor scaled = grad_out;
    scale_inplace(scaled, config_.residual_scaling);
    Tensor grad_features = block.convs.back().backward(params_, tape.features, scaled, &grads);
    for (int k = kConvsPerDenseBlock - 2; k >= 0; --k) {
        const int begin = c + k * g;
        const Tensor y = nn::slice_channels(tape.features, begin, begin + g);
        Tensor grad_y = nn::slice_channels(grad_features, begin, begin + g);
        nn::leaky_relu_backward_inplace(y, grad_y);
        const Tensor prefix = nn::slice_channels(tape.features, 0, begin);
        const Tensor grad_prefix = block.convs[static_cast<std::size_t>(k)].backward(params_, prefix, grad_y, &grads);
        nn::add_into_channels(grad_features, grad_prefix, 0);
    }
    Tensor grad_x = grad_out;
    add_scaled(grad_x, nn::slice_channels(grad_features, 0, c));
    return grad_x;
}

Tensor Generator::forward(const Tensor& lr_batch, const DropoutMode& mode, GeneratorTape* tape) const {
    if (lr_batch.rank() != 4 || lr_batch.dim(1) != config_.in_channels) {
        throw ShapeError("generator expects N x " + std::to_string(config_.in_channels) + " x H x W, got " +
                         shape_string(lr_batch.shape()));
    }
    Tensor head = head_.forward(params_, lr_batch);
    Tensor mask;
    Tensor dropped;
    if (mode.is_stochastic() && config_.dropout_rate > 0.0) {
        mask = dropout_mask(head.shape(), mode);
        dropped = multiply(head, mask);
    } else {
        dropped = head;
    }

    Tensor current = dropped;
    std::vector<RrdbTape> rrdb_tapes;
    for (const Rrdb& rrdb : rrdbs_) {
        RrdbTape rt;
        Tensor out = current;
        for (const DenseBlock& block : rrdb.blocks) {
            DenseBlockTape bt;
            out = dense_block_forward(block, out, tape != nullptr ? &bt : nullptr);
            if (tape != nullptr) rt.blocks.push_back(std::move(bt));
        }
        scale_inplace(out, config_.residual_scaling);
        add_scaled(out, current);
        current = std::move(out);
        if (tape != nullptr) rrdb_tapes.push_back(std::move(rt));
    }

    Tensor fused = trunk_.forward(params_, current);
    add_scaled(fused, dropped);

    Tensor up1 = nn::pixel_shuffle(up1_.forward(params_, fused), 2);
    nn::leaky_relu_inplace(up1);
    Tensor up2 = nn::pixel_shuffle(up2_.forward(params_, up1), 2);
    nn::leaky_relu_inplace(up2);
    Tensor out = tail_.forward(params_, up2);

    if (tape != nullptr) {
        tape->input = lr_batch;
        tape->head = std::move(head);
        tape->mask = std::move(mask);
        tape->dropped = std::move(dropped);
        tape->rrdbs = std::move(rrdb_tapes);
        tape->body = std::move(current);
        tape->fused = std::move(fused);
        tape->up1 = std::move(up1);
        tape->up2 = std::move(up2);
    }
    return out;
}

void Generator::backward(const GeneratorTape& tape, const Tensor& grad_sr, ParameterSet& grads) const {
    if (!grads.same_layout(params_)) throw ShapeError("gradient set does not match generator parameters");
    Tensor g = tail_.backward(params_, tape.up2, grad_sr, &grads);
    nn::leaky_relu_backward_inplace(tape.up2, g);
    g = up2_.backward(params_, tape.up1, nn::pixel_unshuffle(g, 2), &grads);
    nn::leaky_relu_backward_inplace(tape.up1, g);
    const Tensor grad_fused = up1_.backward(params_, tape.fused, nn::pixel_unshuffle(g, 2), &grads);

    Tensor grad_body = trunk_.backward(params_, tape.body, grad_fused, &grads);
    for (std::size_t r = rrdbs_.size(); r-- > 0;) {
        const Rrdb& rrdb = rrdbs_[r];
        const RrdbTape& rt = tape.rrdbs[r];
        Tensor grad_chain = grad_body;
        scale_inplace(grad_chain, config_.residual_scaling);
        for (std::size_t b = rrdb.blocks.size(); b-- > 0;) {
            grad_chain = dense_block_backward(rrdb.blocks[b], rt.blocks[b], grad_chain, grads);
        }
        add_scaled(grad_body, grad_chain);
    }
    Tensor grad_dropped = grad_fused;
    add_scaled(grad_dropped, grad_body);
    const Tensor grad_head = tape.mask.empty() ? grad_dropped : multiply(grad_dropped, tape.mask);
    head_.backward(params_, tape.input, grad_head, &grads, false);
}

Generator build_generator(const GeneratorConfig& config, std::uint64_t init_seed) {
    Generator gen(config);
    Rng rng(init_seed);
    gen.head_.init_he_normal(gen.params_, rng, 1.0);
    for (const auto& rrdb : gen.rrdbs_) {
        for (const auto& block : rrdb.blocks) {
            for (const auto& conv : block.convs) conv.init_he_normal(gen.params_, rng, kDenseBlockInitGain);
        }
    }
    gen.trunk_.init_he_normal(gen.params_, rng, 1.0);
    gen.up1_.init_icnr(gen.params_, rng, 1.0, 2);
    gen.up2_.init_icnr(gen.params_, rng, 1.0, 2);
    gen.tail_.init_he_normal(gen.params_, rng, 1.0);
    gen.params_.round_to_float32();
    return gen;
}

Tensor generator_forward(const Generator& gen, const Tensor& lr_image, const DropoutMode& mode) {
    if (lr_image.rank() != 3 || lr_image.dim(0) != gen.config().in_channels) {
        throw ShapeError("expected a " + std::to_string(gen.config().in_channels) + " x H x W image, got " +
                         shape_string(lr_image.shape()));
    }
    if (lr_image.dim(1) < kMinLrExtent || lr_image.dim(2) < kMinLrExtent) {
        throw SizeError("input " + shape_string(lr_image.shape()) + " is below the minimum spatial size " +
                        std::to_string(kMinLrExtent));
    }
    if (!lr_image.all_finite()) throw InputError("input image contains non-finite values");
    return batch_item(gen.forward(as_batch(lr_image), mode), 0);
}

// ---------------------------------------------------------------------------
// Discriminator

Discriminator::Discriminator(const DiscriminatorConfig& config) : config_(config) {
    config_.validate();
    build_layers();
}

Discriminator::Discriminator(const DiscriminatorConfig& config, ParameterSet params) : Discriminator(config) {
    if (!params_.same_layout(params)) {
        throw IncompatibilityError("parameter set does not match the discriminator architecture");
    }
    params_ = std::move(params);
}

void Discriminator::build_layers() {
    int in = config_.in_channels;
    int extent = config_.patch_size;
    for (int s = 0; s < config_.num_stages; ++s) {
        const int ch = config_.base_channels * std::min(1 << s, 8);
        const std::string stage = "stage" + std::to_string(s);
        convs_.emplace_back(params_, stage + ".conv0", nn::ConvGeometry{in, ch, 3, 1, 1, 1});
        convs_.emplace_back(params_, stage + ".conv1", nn::ConvGeometry{ch, ch, 4, 2, 1, 1});
        in = ch;
        extent /= 2;
    }
    hidden_ = nn::Linear(params_, "hidden", in * extent * extent, config_.hidden_units);
    output_ = nn::Linear(params_, "output", config_.hidden_units, 1);
}

Tensor Discriminator::forward(const Tensor& batch, DiscriminatorTape* tape) const {
    const int s = config_.patch_size;
    if (batch.rank() != 4 || batch.dim(1) != config_.in_channels || batch.dim(2) != s || batch.dim(3) != s) {
        throw ShapeError("discriminator expects N x " + std::to_string(config_.in_channels) + " x " +
                         std::to_string(s) + " x " + std::to_string(s) + ", got " + shape_string(batch.shape()));
    }
    std::vector<Tensor> acts;
    Tensor x = batch;
    for (const nn::Conv2d& conv : convs_) {
        Tensor y = conv.forward(params_, x);
        nn::leaky_relu_inplace(y);
        if (tape != nullptr) acts.push_back(std::move(x));
        x = std::move(y);
    }
    const int n = batch.dim(0);
    Tensor flat = x.reshaped({n, static_cast<int>(x.size() / static_cast<std::size_t>(n))});
    Tensor hidden = hidden_.forward(params_, flat);
    nn::leaky_relu_inplace(hidden);
    Tensor logits = output_.forward(params_, hidden).reshaped({n});
    if (tape != nullptr) {
        acts.push_back(std::move(x));
        tape->activations = std::move(acts);
        tape->hidden = std::move(hidden);
    }
    return logits;
}

Tensor Discriminator::backward(const DiscriminatorTape& tape, const Tensor& grad_logits, ParameterSet* grads) const {
    const Tensor& last = tape.activations.back();
    const int n = last.dim(0);
    Tensor g = output_.backward(params_, tape.hidden, grad_logits.reshaped({n, 1}), grads);
    nn::leaky_relu_backward_inplace(tape.hidden, g);
    const Tensor flat = last.reshaped({n, static_cast<int>(last.size() / static_cast<std::size_t>(n))});
    g = hidden_.backward(params_, flat, g, grads).reshaped(last.shape());
    for (std::size_t i = convs_.size(); i-- > 0;) {
        nn::leaky_relu_backward_inplace(tape.activations[i + 1], g);
        g = convs_[i].backward(params_, tape.activations[i], g, grads);
    }
    return g;
}

Discriminator build_discriminator(const DiscriminatorConfig& config, std::uint64_t init_seed) {
    Discriminator disc(config);
    Rng rng(init_seed);
    for (const auto& conv : disc.convs_) conv.init_he_normal(disc.params_, rng, 1.0);
    disc.hidden_.init_he_normal(disc.params_, rng, 1.0);
    disc.output_.init_he_normal(disc.params_, rng, 1.0);
    disc.params_.round_to_float32();
    return disc;
}

double discriminator_forward(const Discriminator& disc, const Tensor& image) {
    const int s = disc.config().patch_size;
    if (image.rank() != 3 || image.dim(0) != disc.config().in_channels || image.dim(1) != s || image.dim(2) != s) {
        throw ShapeError("discriminator expects a " + std::to_string(disc.config().in_channels) + " x " +
                         std::to_string(s) + " x " + std::to_string(s) + " image, got " + shape_string(image.shape()));
    }
    return disc.forward(as_batch(image))[0];
}

}  // namespace suesr
