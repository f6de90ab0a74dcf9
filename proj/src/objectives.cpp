#include "suesr/objectives.hpp"

#include <cmath>

#include "suesr/errors.hpp"
#include "suesr/semantics.hpp"

namespace suesr {

void LossWeights::validate() const {
    const std::pair<const char*, double> fields[] = {
        {"loss.w_pixel", pixel}, {"loss.w_perceptual", perceptual}, {"loss.w_adversarial", adversarial},
        {"loss.w_semantic", semantic}};
    for (const auto& [name, value] : fields) {
        if (!std::isfinite(value) || value < 0.0) throw ConfigError(name, "must be finite and non-negative");
    }
}

namespace {

double mean_abs_difference(const Tensor& a, const Tensor& b, Tensor* grad_a) {
    if (!a.same_shape(b)) throw ShapeError("shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    if (a.empty()) throw ShapeError("empty tensors");
    const double inv = 1.0 / static_cast<double>(a.size());
    if (grad_a != nullptr) *grad_a = Tensor(a.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        total += std::abs(d);
        if (grad_a != nullptr) (*grad_a)[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
    }
    return total * inv;
}

Tensor to_batch(const Tensor& t) { return t.rank() == 3 ? as_batch(t) : t; }

double mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

void require_logits(std::span<const double> real, std::span<const double> fake) {
    if (real.empty() || fake.empty()) throw InputError("RaGAN loss needs non-empty real and fake logit lists");
    for (double v : real) {
        if (!std::isfinite(v)) throw InputError("non-finite real logit");
    }
    for (double v : fake) {
        if (!std::isfinite(v)) throw InputError("non-finite fake logit");
    }
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// L = -mean_i log s(a_i - mean b) - mean_j log(1 - s(b_j - mean a))
//   = mean_i softplus(-(a_i - mean b)) + mean_j softplus(b_j - mean a)
double relativistic_loss(std::span<const double> a, std::span<const double> b, std::vector<double>* grad_a,
                         std::vector<double>* grad_b) {
    require_logits(a, b);
    const double mean_a = mean(a), mean_b = mean(b);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    double first = 0.0, second = 0.0;
    // d softplus(x)/dx = s(x)
    std::vector<double> da(a.size(), 0.0), db(b.size(), 0.0);
    double sum_first_sig = 0.0, sum_second_sig = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i] - mean_b;
        first += softplus(-x);
        const double s = sigmoid(-x);  // d/dx softplus(-x) = -s(-x)
        da[i] -= s / na;
        sum_first_sig += s;
    }
    for (std::size_t j = 0; j < b.size(); ++j) {
        const double x = b[j] - mean_a;
        second += softplus(x);
        const double s = sigmoid(x);
        db[j] += s / nb;
        sum_second_sig += s;
    }
    // Gradient through the batch means.
    for (double& v : db) v += sum_first_sig / na / nb;
    for (double& v : da) v -= sum_second_sig / nb / na;
    if (grad_a != nullptr) *grad_a = std::move(da);
    if (grad_b != nullptr) *grad_b = std::move(db);
    return first / na + second / nb;
}

}  // namespace

double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double pixel_loss(const Tensor& sr, const Tensor& hr, Tensor* grad_sr) { return mean_abs_difference(sr, hr, grad_sr); }

double perceptual_loss(const Tensor& sr, const Tensor& hr, const FeatureExtractor& fx, Tensor* grad_sr) {
    if (!sr.same_shape(hr)) throw ShapeError("shape mismatch: " + shape_string(sr.shape()) + " vs " + shape_string(hr.shape()));
    const Tensor sr_batch = to_batch(sr);
    const Tensor f_sr = fx.extract(sr_batch);
    const Tensor f_hr = fx.extract(to_batch(hr));
    Tensor grad_features;
    const double loss = mean_abs_difference(f_sr, f_hr, grad_sr != nullptr ? &grad_features : nullptr);
    if (grad_sr != nullptr) *grad_sr = fx.extract_vjp(sr_batch, grad_features).reshaped(sr.shape());
    return loss;
}

double ragan_discriminator_loss(std::span<const double> real_logits, std::span<const double> fake_logits,
                                std::vector<double>* grad_real, std::vector<double>* grad_fake) {
    return relativistic_loss(real_logits, fake_logits, grad_real, grad_fake);
}

double ragan_generator_loss(std::span<const double> real_logits, std::span<const double> fake_logits,
                            std::vector<double>* grad_real, std::vector<double>* grad_fake) {
    return relativistic_loss(fake_logits, real_logits, grad_fake, grad_real);
}

LossBreakdown composite_generator_loss(const Tensor& sr, const Tensor& hr, std::span<const double> real_logits,
                                       std::span<const double> fake_logits, const Tensor& p_sr, const Tensor& p_hr,
                                       const LossWeights& weights, const FeatureExtractor& fx,
                                       GeneratorLossGradients* grads) {
    weights.validate();
    LossBreakdown b;
    Tensor g_pixel, g_perceptual, g_semantic;
    std::vector<double> g_fake;
    const bool want = grads != nullptr;
    b.pixel = pixel_loss(sr, hr, want ? &g_pixel : nullptr);
    b.perceptual = perceptual_loss(sr, hr, fx, want ? &g_perceptual : nullptr);
    b.adversarial = ragan_generator_loss(real_logits, fake_logits, nullptr, want ? &g_fake : nullptr);
    b.semantic = semantic_surrogate_loss(p_sr, p_hr, want ? &g_semantic : nullptr);
    b.total = weights.pixel * b.pixel + weights.perceptual * b.perceptual + weights.adversarial * b.adversarial +
              weights.semantic * b.semantic;
    if (want) {
        grads->sr = Tensor(sr.shape());
        add_scaled(grads->sr, g_pixel, weights.pixel);
        add_scaled(grads->sr, g_perceptual, weights.perceptual);
        for (double& v : g_fake) v *= weights.adversarial;
        grads->fake_logits = std::move(g_fake);
        for (double& v : g_semantic.values()) v *= weights.semantic;
        grads->p_sr = std::move(g_semantic);
    }
    return b;
}

}  // namespace suesr
