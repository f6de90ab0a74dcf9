#pragma once

#include <span>
#include <vector>

#include "suesr/features.hpp"
#include "suesr/tensor.hpp"

namespace suesr {

struct LossWeights {
    double pixel = 0.01;
    double perceptual = 1.0;
    double adversarial = 0.005;
    double semantic = 0.1;

    void validate() const;
    bool operator==(const LossWeights&) const = default;
};

struct LossBreakdown {
    double pixel = 0.0;
    double perceptual = 0.0;
    double adversarial = 0.0;
    double semantic = 0.0;
    double total = 0.0;
};

/// Mean absolute difference over all elements.
double pixel_loss(const Tensor& sr, const Tensor& hr, Tensor* grad_sr = nullptr);

/// Mean absolute difference between extracted features of sr and hr
/// (single images or batches).
double perceptual_loss(const Tensor& sr, const Tensor& hr, const FeatureExtractor& fx, Tensor* grad_sr = nullptr);

/// Numerically stable log(1 + exp(x)).
double softplus(double x);

/// Relativistic average discriminator loss
///   -E_r[log s(C(r) - E_f C(f))] - E_f[log(1 - s(C(f) - E_r C(r)))].
double ragan_discriminator_loss(std::span<const double> real_logits, std::span<const double> fake_logits,
                                std::vector<double>* grad_real = nullptr, std::vector<double>* grad_fake = nullptr);

/// The same expression with the roles of real and fake exchanged.
double ragan_generator_loss(std::span<const double> real_logits, std::span<const double> fake_logits,
                            std::vector<double>* grad_real = nullptr, std::vector<double>* grad_fake = nullptr);

struct GeneratorLossGradients {
    Tensor sr;                        // from the pixel and perceptual terms
    std::vector<double> fake_logits;  // from the adversarial term
    Tensor p_sr;                      // from the semantic term
};

/// Weighted sum of the four generator terms. Terms with zero weight are
/// still evaluated so the breakdown is always complete.
LossBreakdown composite_generator_loss(const Tensor& sr, const Tensor& hr, std::span<const double> real_logits,
                                       std::span<const double> fake_logits, const Tensor& p_sr, const Tensor& p_hr,
                                       const LossWeights& weights, const FeatureExtractor& fx,
                                       GeneratorLossGradients* grads = nullptr);

}  // namespace suesr
