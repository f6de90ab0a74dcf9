#include "suesr/layers.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "suesr/errors.hpp"

namespace suesr::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_rank4(const Tensor& x, const char* what) {
    if (x.rank() != 4) throw ShapeError(std::string(what) + ": expected N x C x H x W, got " + shape_string(x.shape()));
}

bool is_pointwise(const ConvGeometry& g) {
    return g.kernel == 1 && g.stride == 1 && g.padding == 0;
}

void im2col(const ConvGeometry& g, const double* image, int height, int width, int out_h, int out_w,
            double* col) {
    const int k = g.kernel;
    const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
    for (int c = 0; c < g.in_channels; ++c) {
        const double* channel = image + static_cast<std::size_t>(c) * height * width;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * g.stride - g.padding + ky * g.dilation;
                    double* dst = row + static_cast<std::size_t>(oy) * out_w;
                    if (iy < 0 || iy >= height) {
                        std::fill(dst, dst + out_w, 0.0);
                        continue;
                    }
                    const double* src = channel + static_cast<std::size_t>(iy) * width;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * g.stride - g.padding + kx * g.dilation;
                        dst[ox] = (ix >= 0 && ix < width) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const ConvGeometry& g, const double* col, int height, int width, int out_h, int out_w, double* image) {
    const int k = g.kernel;
    const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
    for (int c = 0; c < g.in_channels; ++c) {
        double* channel = image + static_cast<std::size_t>(c) * height * width;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * g.stride - g.padding + ky * g.dilation;
                    if (iy < 0 || iy >= height) continue;
                    const double* src = row + static_cast<std::size_t>(oy) * out_w;
                    double* dst = channel + static_cast<std::size_t>(iy) * width;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * g.stride - g.padding + kx * g.dilation;
                        if (ix >= 0 && ix < width) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Conv2d::Conv2d(ParameterSet& params, const std::string& name, ConvGeometry geometry) : geometry_(geometry) {
    if (geometry.in_channels < 1 || geometry.out_channels < 1 || geometry.kernel < 1 || geometry.stride < 1 ||
        geometry.dilation < 1 || geometry.padding < 0) {
        throw ConfigError(name, "invalid convolution geometry");
    }
    weight_ = params.add(name + ".weight",
                         {geometry.out_channels, geometry.in_channels, geometry.kernel, geometry.kernel});
    bias_ = params.add(name + ".bias", {geometry.out_channels});
}

void Conv2d::init_he_normal(ParameterSet& params, Rng& rng, double gain) const {
    const double fan_in = static_cast<double>(geometry_.in_channels) * geometry_.kernel * geometry_.kernel;
    const double stddev = gain * std::sqrt(2.0 / fan_in);
    for (double& w : params[weight_].values) w = stddev * rng.normal();
    std::fill(params[bias_].values.begin(), params[bias_].values.end(), 0.0);
}

void Conv2d::init_icnr(ParameterSet& params, Rng& rng, double gain, int r) const {
    const int group = r * r;
    if (r < 1 || geometry_.out_channels % group != 0) throw ShapeError("ICNR: channels not divisible by r^2");
    const double fan_in = static_cast<double>(geometry_.in_channels) * geometry_.kernel * geometry_.kernel;
    const double stddev = gain * std::sqrt(2.0 / fan_in);
    const auto per_out = static_cast<std::size_t>(fan_in);
    auto& w = params[weight_].values;
    for (int base = 0; base < geometry_.out_channels / group; ++base) {
        const std::size_t first = static_cast<std::size_t>(base) * group * per_out;
        for (std::size_t i = 0; i < per_out; ++i) w[first + i] = stddev * rng.normal();
        for (int s = 1; s < group; ++s)
            std::copy_n(w.begin() + static_cast<long>(first), per_out, w.begin() + static_cast<long>(first + s * per_out));
    }
    std::fill(params[bias_].values.begin(), params[bias_].values.end(), 0.0);
}

Tensor Conv2d::forward(const ParameterSet& params, const Tensor& x) const {
    require_rank4(x, "conv2d");
    const ConvGeometry& g = geometry_;
    if (x.dim(1) != g.in_channels) {
        throw ShapeError("conv2d expects " + std::to_string(g.in_channels) + " input channels, got " +
                         shape_string(x.shape()));
    }
    const int batch = x.dim(0), height = x.dim(2), width = x.dim(3);
    const int out_h = g.output_extent(height), out_w = g.output_extent(width);
    if (out_h < 1 || out_w < 1) throw ShapeError("conv2d input " + shape_string(x.shape()) + " is too small");

    const int rows = g.in_channels * g.kernel * g.kernel;
    const int cols = out_h * out_w;
    Tensor out({batch, g.out_channels, out_h, out_w});
    ConstMatrixMap weight(params[weight_].values.data(), g.out_channels, rows);
    const Eigen::Map<const Eigen::VectorXd> bias(params[bias_].values.data(), g.out_channels);
    AlignedVector col;
    if (!is_pointwise(g)) col.resize(static_cast<std::size_t>(rows) * cols);

    const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * height * width;
    const std::size_t out_stride = static_cast<std::size_t>(g.out_channels) * cols;
    for (int n = 0; n < batch; ++n) {
        const double* image = x.data() + n * in_stride;
        const double* col_data = image;
        if (!is_pointwise(g)) {
            im2col(g, image, height, width, out_h, out_w, col.data());
            col_data = col.data();
        }
        MatrixMap result(out.data() + n * out_stride, g.out_channels, cols);
        result.noalias() = weight * ConstMatrixMap(col_data, rows, cols);
        result.colwise() += bias;
    }
    return out;
}

Tensor Conv2d::backward(const ParameterSet& params, const Tensor& x, const Tensor& grad_out, ParameterSet* grads,
                        bool need_input_grad) const {
    require_rank4(x, "conv2d backward");
    const ConvGeometry& g = geometry_;
    const int batch = x.dim(0), height = x.dim(2), width = x.dim(3);
    const int out_h = g.output_extent(height), out_w = g.output_extent(width);
    if (grad_out.shape() != std::vector<int>{batch, g.out_channels, out_h, out_w}) {
        throw ShapeError("conv2d backward: gradient shape " + shape_string(grad_out.shape()) + " does not match");
    }
    const int rows = g.in_channels * g.kernel * g.kernel;
    const int cols = out_h * out_w;
    ConstMatrixMap weight(params[weight_].values.data(), g.out_channels, rows);

    Tensor grad_in;
    if (need_input_grad) grad_in = Tensor(x.shape());
    AlignedVector col;
    AlignedVector grad_col;
    if (!is_pointwise(g)) {
        col.resize(static_cast<std::size_t>(rows) * cols);
        if (need_input_grad) grad_col.resize(col.size());
    }

    const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * height * width;
    const std::size_t out_stride = static_cast<std::size_t>(g.out_channels) * cols;
    for (int n = 0; n < batch; ++n) {
        ConstMatrixMap dout(grad_out.data() + n * out_stride, g.out_channels, cols);
        const double* image = x.data() + n * in_stride;
        if (grads != nullptr) {
            const double* col_data = image;
            if (!is_pointwise(g)) {
                im2col(g, image, height, width, out_h, out_w, col.data());
                col_data = col.data();
            }
            MatrixMap dweight((*grads)[weight_].values.data(), g.out_channels, rows);
            dweight.noalias() += dout * ConstMatrixMap(col_data, rows, cols).transpose();
            Eigen::Map<Eigen::VectorXd> dbias((*grads)[bias_].values.data(), g.out_channels);
            dbias += dout.rowwise().sum();
        }
        if (need_input_grad) {
            double* dimage = grad_in.data() + n * in_stride;
            if (is_pointwise(g)) {
                MatrixMap(dimage, rows, cols).noalias() = weight.transpose() * dout;
            } else {
                MatrixMap(grad_col.data(), rows, cols).noalias() = weight.transpose() * dout;
                col2im(g, grad_col.data(), height, width, out_h, out_w, dimage);
            }
        }
    }
    return grad_in;
}

Linear::Linear(ParameterSet& params, const std::string& name, int in_features, int out_features)
    : in_(in_features), out_(out_features) {
    if (in_features < 1 || out_features < 1) throw ConfigError(name, "linear layer needs positive sizes");
    weight_ = params.add(name + ".weight", {out_features, in_features});
    bias_ = params.add(name + ".bias", {out_features});
}

void Linear::init_he_normal(ParameterSet& params, Rng& rng, double gain) const {
    const double stddev = gain * std::sqrt(2.0 / in_);
    for (double& w : params[weight_].values) w = stddev * rng.normal();
    std::fill(params[bias_].values.begin(), params[bias_].values.end(), 0.0);
}

Tensor Linear::forward(const ParameterSet& params, const Tensor& x) const {
    const int batch = x.dim(0);
    if (x.size() != static_cast<std::size_t>(batch) * in_) {
        throw ShapeError("linear expects " + std::to_string(in_) + " features per item, got " + shape_string(x.shape()));
    }
    Tensor out({batch, out_});
    ConstMatrixMap input(x.data(), batch, in_);
    ConstMatrixMap weight(params[weight_].values.data(), out_, in_);
    const Eigen::Map<const Eigen::RowVectorXd> bias(params[bias_].values.data(), out_);
    MatrixMap result(out.data(), batch, out_);
    result.noalias() = input * weight.transpose();
    result.rowwise() += bias;
    return out;
}

Tensor Linear::backward(const ParameterSet& params, const Tensor& x, const Tensor& grad_out, ParameterSet* grads,
                        bool need_input_grad) const {
    const int batch = x.dim(0);
    if (grad_out.shape() != std::vector<int>{batch, out_}) throw ShapeError("linear backward: gradient shape mismatch");
    ConstMatrixMap input(x.data(), batch, in_);
    ConstMatrixMap dout(grad_out.data(), batch, out_);
    if (grads != nullptr) {
        MatrixMap(((*grads)[weight_]).values.data(), out_, in_).noalias() += dout.transpose() * input;
        Eigen::Map<Eigen::RowVectorXd>((*grads)[bias_].values.data(), out_) += dout.colwise().sum();
    }
    Tensor grad_in;
    if (need_input_grad) {
        grad_in = Tensor(x.shape());
        ConstMatrixMap weight(params[weight_].values.data(), out_, in_);
        MatrixMap(grad_in.data(), batch, in_).noalias() = dout * weight;
    }
    return grad_in;
}

void leaky_relu_inplace(Tensor& x, double slope) {
    for (double& v : x.values()) {
        if (v < 0.0) v *= slope;
    }
}

void leaky_relu_backward_inplace(const Tensor& output, Tensor& grad, double slope) {
    const double* y = output.data();
    double* g = grad.data();
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (y[i] < 0.0) g[i] *= slope;
    }
}

void relu_inplace(Tensor& x) {
    for (double& v : x.values()) v = std::max(v, 0.0);
}

void relu_backward_inplace(const Tensor& output, Tensor& grad) {
    const double* y = output.data();
    double* g = grad.data();
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (y[i] <= 0.0) g[i] = 0.0;
    }
}

namespace {

Tensor to_rank4(const Tensor& x, bool& was_rank3) {
    was_rank3 = x.rank() == 3;
    if (was_rank3) return as_batch(x);
    require_rank4(x, "pixel shuffle");
    return x;
}

}  // namespace

Tensor pixel_shuffle(const Tensor& input, int r) {
    if (r < 1) throw ShapeError("pixel shuffle factor must be positive");
    bool rank3 = false;
    const Tensor x = to_rank4(input, rank3);
    const int batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
    if (channels % (r * r) != 0) {
        throw ShapeError("pixel shuffle: " + std::to_string(channels) + " channels not divisible by " +
                         std::to_string(r * r));
    }
    const int out_c = channels / (r * r);
    Tensor out({batch, out_c, height * r, width * r});
    for (int n = 0; n < batch; ++n) {
        for (int c = 0; c < out_c; ++c) {
            for (int dy = 0; dy < r; ++dy) {
                for (int dx = 0; dx < r; ++dx) {
                    const int src_c = c * r * r + dy * r + dx;
                    for (int y = 0; y < height; ++y) {
                        for (int xx = 0; xx < width; ++xx) {
                            out.at(n, c, r * y + dy, r * xx + dx) = x.at(n, src_c, y, xx);
                        }
                    }
                }
            }
        }
    }
    if (rank3) return batch_item(out, 0);
    return out;
}

Tensor pixel_unshuffle(const Tensor& input, int r) {
    if (r < 1) throw ShapeError("pixel unshuffle factor must be positive");
    bool rank3 = false;
    const Tensor x = to_rank4(input, rank3);
    const int batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
    if (height % r != 0 || width % r != 0) throw ShapeError("pixel unshuffle: spatial size not divisible by factor");
    const int in_h = height / r, in_w = width / r;
    Tensor out({batch, channels * r * r, in_h, in_w});
    for (int n = 0; n < batch; ++n) {
        for (int c = 0; c < channels; ++c) {
            for (int dy = 0; dy < r; ++dy) {
                for (int dx = 0; dx < r; ++dx) {
                    const int dst_c = c * r * r + dy * r + dx;
                    for (int y = 0; y < in_h; ++y) {
                        for (int xx = 0; xx < in_w; ++xx) {
                            out.at(n, dst_c, y, xx) = x.at(n, c, r * y + dy, r * xx + dx);
                        }
                    }
                }
            }
        }
    }
    if (rank3) return batch_item(out, 0);
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require_rank4(a, "concat");
    require_rank4(b, "concat");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw ShapeError("concat: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    const int batch = a.dim(0);
    const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
    const std::size_t a_item = a.dim(1) * plane, b_item = b.dim(1) * plane;
    Tensor out({batch, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
    for (int n = 0; n < batch; ++n) {
        double* dst = out.data() + n * (a_item + b_item);
        std::copy_n(a.data() + n * a_item, a_item, dst);
        std::copy_n(b.data() + n * b_item, b_item, dst + a_item);
    }
    return out;
}

Tensor slice_channels(const Tensor& x, int begin, int end) {
    require_rank4(x, "slice");
    if (begin < 0 || end > x.dim(1) || begin >= end) throw ShapeError("slice: channel range out of bounds");
    const int batch = x.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    const std::size_t item = x.dim(1) * plane, count = (end - begin) * plane;
    Tensor out({batch, end - begin, x.dim(2), x.dim(3)});
    for (int n = 0; n < batch; ++n) std::copy_n(x.data() + n * item + begin * plane, count, out.data() + n * count);
    return out;
}

void add_into_channels(Tensor& x, const Tensor& src, int begin) {
    require_rank4(x, "add_into_channels");
    require_rank4(src, "add_into_channels");
    if (src.dim(0) != x.dim(0) || begin + src.dim(1) > x.dim(1) || src.dim(2) != x.dim(2) || src.dim(3) != x.dim(3)) {
        throw ShapeError("add_into_channels: shape mismatch");
    }
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    const std::size_t item = x.dim(1) * plane, count = src.dim(1) * plane;
    for (int n = 0; n < x.dim(0); ++n) {
        double* dst = x.data() + n * item + begin * plane;
        const double* s = src.data() + n * count;
        for (std::size_t i = 0; i < count; ++i) dst[i] += s[i];
    }
}

Tensor max_pool2x2(const Tensor& x) {
    require_rank4(x, "max pool");
    const int out_h = x.dim(2) / 2, out_w = x.dim(3) / 2;
    Tensor out({x.dim(0), x.dim(1), out_h, out_w});
    for (int n = 0; n < x.dim(0); ++n)
        for (int c = 0; c < x.dim(1); ++c)
            for (int y = 0; y < out_h; ++y)
                for (int xx = 0; xx < out_w; ++xx) {
                    out.at(n, c, y, xx) = std::max({x.at(n, c, 2 * y, 2 * xx), x.at(n, c, 2 * y, 2 * xx + 1),
                                                    x.at(n, c, 2 * y + 1, 2 * xx), x.at(n, c, 2 * y + 1, 2 * xx + 1)});
                }
    return out;
}

Tensor max_pool2x2_backward(const Tensor& x, const Tensor& grad_out) {
    Tensor grad(x.shape());
    for (int n = 0; n < grad_out.dim(0); ++n)
        for (int c = 0; c < grad_out.dim(1); ++c)
            for (int y = 0; y < grad_out.dim(2); ++y)
                for (int xx = 0; xx < grad_out.dim(3); ++xx) {
                    // First maximum in raster order receives the gradient.
                    int best_y = 2 * y, best_x = 2 * xx;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            if (x.at(n, c, 2 * y + dy, 2 * xx + dx) > x.at(n, c, best_y, best_x)) {
                                best_y = 2 * y + dy;
                                best_x = 2 * xx + dx;
                            }
                    grad.at(n, c, best_y, best_x) += grad_out.at(n, c, y, xx);
                }
    return grad;
}

namespace {

struct LinearTap {
    int i0, i1;
    double w0, w1;
};

std::vector<LinearTap> bilinear_taps(int in_size, int out_size) {
    std::vector<LinearTap> taps(static_cast<std::size_t>(out_size));
    const double scale = static_cast<double>(in_size) / out_size;
    for (int o = 0; o < out_size; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        src = std::max(src, 0.0);
        int i0 = static_cast<int>(std::floor(src));
        i0 = std::min(i0, in_size - 1);
        const int i1 = std::min(i0 + 1, in_size - 1);
        const double frac = src - i0;
        taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - frac, frac};
    }
    return taps;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
    require_rank4(x, "bilinear resize");
    const auto ty = bilinear_taps(x.dim(2), out_h);
    const auto tx = bilinear_taps(x.dim(3), out_w);
    Tensor out({x.dim(0), x.dim(1), out_h, out_w});
    for (int n = 0; n < x.dim(0); ++n)
        for (int c = 0; c < x.dim(1); ++c)
            for (int y = 0; y < out_h; ++y) {
                const LinearTap& a = ty[static_cast<std::size_t>(y)];
                for (int xx = 0; xx < out_w; ++xx) {
                    const LinearTap& b = tx[static_cast<std::size_t>(xx)];
                    out.at(n, c, y, xx) = a.w0 * (b.w0 * x.at(n, c, a.i0, b.i0) + b.w1 * x.at(n, c, a.i0, b.i1)) +
                                          a.w1 * (b.w0 * x.at(n, c, a.i1, b.i0) + b.w1 * x.at(n, c, a.i1, b.i1));
                }
            }
    return out;
}

Tensor bilinear_resize_backward(const Tensor& grad_out, int in_h, int in_w) {
    require_rank4(grad_out, "bilinear resize backward");
    const auto ty = bilinear_taps(in_h, grad_out.dim(2));
    const auto tx = bilinear_taps(in_w, grad_out.dim(3));
    Tensor grad({grad_out.dim(0), grad_out.dim(1), in_h, in_w});
    for (int n = 0; n < grad_out.dim(0); ++n)
        for (int c = 0; c < grad_out.dim(1); ++c)
            for (int y = 0; y < grad_out.dim(2); ++y) {
                const LinearTap& a = ty[static_cast<std::size_t>(y)];
                for (int xx = 0; xx < grad_out.dim(3); ++xx) {
                    const LinearTap& b = tx[static_cast<std::size_t>(xx)];
                    const double g = grad_out.at(n, c, y, xx);
                    grad.at(n, c, a.i0, b.i0) += g * a.w0 * b.w0;
                    grad.at(n, c, a.i0, b.i1) += g * a.w0 * b.w1;
                    grad.at(n, c, a.i1, b.i0) += g * a.w1 * b.w0;
                    grad.at(n, c, a.i1, b.i1) += g * a.w1 * b.w1;
                }
            }
    return grad;
}

}  // namespace suesr::nn
