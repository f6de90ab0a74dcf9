#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "suesr/layers.hpp"
#include "suesr/parameters.hpp"
#include "suesr/tensor.hpp"

namespace suesr {

struct GeneratorConfig {
    int in_channels = 3;
    int base_channels = 64;
    int num_rrdb = 5;
    int growth_channels = 32;
    int dense_blocks_per_rrdb = 3;
    double dropout_rate = 0.2;
    int scale_factor = 4;
    double residual_scaling = 0.2;

    /// Throws ConfigError naming the first invalid field.
    void validate() const;
    bool operator==(const GeneratorConfig&) const = default;
};

struct DiscriminatorConfig {
    int in_channels = 3;
    int patch_size = 256;
    int base_channels = 64;
    int num_stages = 5;
    int hidden_units = 100;

    void validate() const;
    bool operator==(const DiscriminatorConfig&) const = default;
};

/// Dropout behaviour of a forward pass. Disabled passes are deterministic;
/// stochastic passes draw their mask from the given seed only.
class DropoutMode {
public:
    static DropoutMode disabled() { return DropoutMode(false, 0); }
    static DropoutMode stochastic(std::uint64_t seed) { return DropoutMode(true, seed); }

    bool is_stochastic() const noexcept { return stochastic_; }
    std::uint64_t seed() const noexcept { return seed_; }

private:
    DropoutMode(bool stochastic, std::uint64_t seed) : stochastic_(stochastic), seed_(seed) {}
    bool stochastic_;
    std::uint64_t seed_;
};

struct LayerInfo {
    std::string name;
    std::string kind;
};

/// Anything that maps an LR batch to an SR batch under a dropout mode.
class StochasticUpscaler {
public:
    virtual ~StochasticUpscaler() = default;
    virtual Tensor upscale(const Tensor& lr_batch, const DropoutMode& mode) const = 0;
    virtual double dropout_rate() const = 0;
};

struct DenseBlockTape {
    Tensor features;  // input followed by the four intermediate activations
};

struct RrdbTape {
    std::vector<DenseBlockTape> blocks;
};

/// Activations recorded by a generator forward pass for backpropagation.
struct GeneratorTape {
    Tensor input;
    Tensor head;
    Tensor mask;
    Tensor dropped;
    std::vector<RrdbTape> rrdbs;
    Tensor body;     // output of the last RRDB (trunk-conv input)
    Tensor fused;    // dropped + trunk(body): the pre-upsample features
    Tensor up1;      // after shuffle + LeakyReLU
    Tensor up2;
};

class Generator : public StochasticUpscaler {
public:
    /// Architecture with zero-valued parameters.
    explicit Generator(const GeneratorConfig& config);
    /// Architecture bound to existing parameters (layout must match).
    Generator(const GeneratorConfig& config, ParameterSet params);

    const GeneratorConfig& config() const noexcept { return config_; }
    const ParameterSet& parameters() const noexcept { return params_; }
    ParameterSet& parameters() noexcept { return params_; }
    std::vector<LayerInfo> layers() const;

    /// Batch forward: N x C x H x W -> N x 3 x 4H x 4W.
    Tensor forward(const Tensor& lr_batch, const DropoutMode& mode, GeneratorTape* tape = nullptr) const;
    /// Accumulates parameter gradients for d(loss)/d(output) = grad_sr.
    void backward(const GeneratorTape& tape, const Tensor& grad_sr, ParameterSet& grads) const;

    Tensor upscale(const Tensor& lr_batch, const DropoutMode& mode) const override { return forward(lr_batch, mode); }
    double dropout_rate() const override { return config_.dropout_rate; }

    /// Dropout mask for a head activation of the given shape (values 0 or 1/(1-p)).
    Tensor dropout_mask(const std::vector<int>& shape, const DropoutMode& mode) const;

private:
    struct DenseBlock {
        std::vector<nn::Conv2d> convs;
    };
    struct Rrdb {
        std::vector<DenseBlock> blocks;
    };

    void build_layers();
    Tensor dense_block_forward(const DenseBlock& block, const Tensor& x, DenseBlockTape* tape) const;
    Tensor dense_block_backward(const DenseBlock& block, const DenseBlockTape& tape, const Tensor& grad_out,
                                ParameterSet& grads) const;

    GeneratorConfig config_;
    ParameterSet params_;
    nn::Conv2d head_;
    std::vector<Rrdb> rrdbs_;
    nn::Conv2d trunk_;
    nn::Conv2d up1_;
    nn::Conv2d up2_;
    nn::Conv2d tail_;

    friend Generator build_generator(const GeneratorConfig&, std::uint64_t);
};

/// Builds a generator with seeded He-normal weights (gain 0.1 inside dense
/// blocks, ICNR for the two upsampling convolutions).
Generator build_generator(const GeneratorConfig& config, std::uint64_t init_seed);

/// Single-image forward: 3 x H x W in [0,1] -> 3 x 4H x 4W. Requires H, W >= 8 and finite values.
Tensor generator_forward(const Generator& gen, const Tensor& lr_image, const DropoutMode& mode);

struct DiscriminatorTape {
    std::vector<Tensor> activations;  // input, then each conv output after LeakyReLU
    Tensor hidden;                    // first linear output after LeakyReLU
};

/// VGG-style discriminator: stages of (3x3 stride-1 conv, 4x4 stride-2 conv),
/// each followed by LeakyReLU(0.2), then two linear layers down to one logit.
class Discriminator {
public:
    explicit Discriminator(const DiscriminatorConfig& config);
    Discriminator(const DiscriminatorConfig& config, ParameterSet params);

    const DiscriminatorConfig& config() const noexcept { return config_; }
    const ParameterSet& parameters() const noexcept { return params_; }
    ParameterSet& parameters() noexcept { return params_; }

    /// N x 3 x S x S -> N logits (shape [N]).
    Tensor forward(const Tensor& batch, DiscriminatorTape* tape = nullptr) const;
    /// Returns d(loss)/d(input); accumulates parameter gradients when `grads` is non-null.
    Tensor backward(const DiscriminatorTape& tape, const Tensor& grad_logits, ParameterSet* grads) const;

private:
    void build_layers();

    DiscriminatorConfig config_;
    ParameterSet params_;
    std::vector<nn::Conv2d> convs_;
    nn::Linear hidden_;
    nn::Linear output_;

    friend Discriminator build_discriminator(const DiscriminatorConfig&, std::uint64_t);
};

Discriminator build_discriminator(const DiscriminatorConfig& config, std::uint64_t init_seed);

/// Realness logit of one 3 x S x S image.
double discriminator_forward(const Discriminator& disc, const Tensor& image);

}  // namespace suesr
