#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "suesr/layers.hpp"
#include "suesr/parameters.hpp"
#include "suesr/tensor.hpp"

namespace suesr {

/// Fixed (never trained) image -> feature-grid mapping shared by the
/// perceptual loss, LPIPS and FID.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string id() const = 0;
    /// N x 3 x H x W -> N x F x h x w.
    virtual Tensor extract(const Tensor& batch) const = 0;
    /// Vector-Jacobian product: d<grad_features, extract(batch)>/d(batch).
    virtual Tensor extract_vjp(const Tensor& batch, const Tensor& grad_features) const = 0;
};

struct ConvStackLayer {
    std::string name;
    nn::ConvGeometry geometry;
    bool pool_after = false;
};

/// Plain convolutional feature stack: conv -> activation (-> 2x2 max-pool)
/// per layer, applied to mean/std normalized input.
class ConvStackExtractor : public FeatureExtractor {
public:
    enum class Activation { Relu, LeakyRelu };

    ConvStackExtractor(std::string id, std::vector<ConvStackLayer> layers, ParameterSet params,
                       Activation activation, std::vector<double> mean, std::vector<double> stddev);

    std::string id() const override { return id_; }
    Tensor extract(const Tensor& batch) const override;
    Tensor extract_vjp(const Tensor& batch, const Tensor& grad_features) const override;

    const ParameterSet& parameters() const noexcept { return params_; }
    const std::vector<ConvStackLayer>& layer_specs() const noexcept { return specs_; }

private:
    Tensor normalize(const Tensor& batch) const;

    std::string id_;
    std::vector<ConvStackLayer> specs_;
    std::vector<nn::Conv2d> convs_;
    ParameterSet params_;
    Activation activation_;
    std::vector<double> mean_;
    std::vector<double> stddev_;
};

/// Hermetic test extractor: conv 3->8 (3x3, stride 1), LeakyReLU,
/// conv 8->16 (3x3, stride 2), LeakyReLU, weights He-normal from `seed`.
std::unique_ptr<ConvStackExtractor> make_random_conv_extractor(std::uint64_t seed);

/// Loads a pretrained conv stack (e.g. VGG features with folded weights)
/// from a tensor-store directory whose meta.json lists the layers.
std::unique_ptr<ConvStackExtractor> load_conv_stack_extractor(const std::filesystem::path& dir);

/// Backend strings: "random-conv" (seed 1234), "random-conv:<seed>", "conv-stack:<dir>".
std::unique_ptr<FeatureExtractor> make_feature_extractor(const std::string& spec);
void validate_feature_backend_spec(const std::string& spec);

}  // namespace suesr
