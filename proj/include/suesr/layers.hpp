#pragma once

#include <string>

#include "suesr/parameters.hpp"
#include "suesr/rng.hpp"
#include "suesr/tensor.hpp"

namespace suesr::nn {

inline constexpr double kLeakySlope = 0.2;

struct ConvGeometry {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int padding = 1;
    int dilation = 1;

    int output_extent(int input_extent) const {
        return (input_extent + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
    }
    std::size_t weight_count() const {
        return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
    }
};

/// 2-D convolution over N x C x H x W batches with zero padding. Weights live
/// in an external ParameterSet as `<name>.weight` [out, in, k, k] and
/// `<name>.bias` [out].
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParameterSet& params, const std::string& name, ConvGeometry geometry);

    Tensor forward(const ParameterSet& params, const Tensor& x) const;

    /// Accumulates weight/bias gradients into `grads` (when non-null) and
    /// returns the gradient with respect to `x` (empty when not requested).
    Tensor backward(const ParameterSet& params, const Tensor& x, const Tensor& grad_out, ParameterSet* grads,
                    bool need_input_grad = true) const;

    const ConvGeometry& geometry() const noexcept { return geometry_; }
    std::size_t weight_index() const noexcept { return weight_; }
    std::size_t bias_index() const noexcept { return bias_; }

    /// He-normal initialization scaled by `gain`; bias zero.
    void init_he_normal(ParameterSet& params, Rng& rng, double gain) const;
    /// ICNR: He-normal kernels for out_channels / r^2 outputs, each repeated
    /// over its r x r sub-pixel group so a following pixel shuffle starts as
    /// nearest-neighbour upsampling (no checkerboard at init).
    void init_icnr(ParameterSet& params, Rng& rng, double gain, int r) const;

private:
    ConvGeometry geometry_;
    std::size_t weight_ = 0;
    std::size_t bias_ = 0;
};

/// Fully connected layer over N x in matrices (any trailing shape is flattened).
class Linear {
public:
    Linear() = default;
    Linear(ParameterSet& params, const std::string& name, int in_features, int out_features);

    Tensor forward(const ParameterSet& params, const Tensor& x) const;
    Tensor backward(const ParameterSet& params, const Tensor& x, const Tensor& grad_out, ParameterSet* grads,
                    bool need_input_grad = true) const;
    void init_he_normal(ParameterSet& params, Rng& rng, double gain) const;

    int in_features() const noexcept { return in_; }
    int out_features() const noexcept { return out_; }

private:
    int in_ = 0;
    int out_ = 0;
    std::size_t weight_ = 0;
    std::size_t bias_ = 0;
};

void leaky_relu_inplace(Tensor& x, double slope = kLeakySlope);
/// Backward through LeakyReLU given the layer's output (same sign as its input).
void leaky_relu_backward_inplace(const Tensor& output, Tensor& grad, double slope = kLeakySlope);
void relu_inplace(Tensor& x);
void relu_backward_inplace(const Tensor& output, Tensor& grad);

/// Rearranges (C*r*r) x H x W into C x rH x rW:
/// out[c, r*y+dy, r*x+dx] = in[c*r*r + dy*r + dx, y, x]. Accepts rank 3 or 4.
Tensor pixel_shuffle(const Tensor& x, int r);
/// Exact inverse of pixel_shuffle; also its gradient.
Tensor pixel_unshuffle(const Tensor& x, int r);

Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Channels [begin, end) of an N x C x H x W batch.
Tensor slice_channels(const Tensor& x, int begin, int end);
/// x[:, begin:begin+src.C] += src
void add_into_channels(Tensor& x, const Tensor& src, int begin);

Tensor max_pool2x2(const Tensor& x);
Tensor max_pool2x2_backward(const Tensor& x, const Tensor& grad_out);

/// Bilinear resize of an N x C x H x W batch (half-pixel centers, no corner alignment).
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);
Tensor bilinear_resize_backward(const Tensor& grad_out, int in_h, int in_w);

}  // namespace suesr::nn
