#include "suesr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "suesr/errors.hpp"
#include "suesr/rng.hpp"

namespace suesr {

std::size_t element_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_string(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    if (data_.size() != element_count(shape_)) {
        throw ShapeError("value count " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
    }
}

int Tensor::dim(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw ShapeError("axis out of range for shape " + shape_string(shape_));
    return shape_[static_cast<std::size_t>(axis)];
}

double& Tensor::at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
}

double Tensor::at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
}

double& Tensor::at(int n, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
}

double Tensor::at(int n, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (element_count(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    Tensor out(std::move(shape));
    out.data_ = data_;
    return out;
}

Tensor stack(std::span<const Tensor> items) {
    if (items.empty()) throw ShapeError("cannot stack an empty list");
    std::vector<int> shape = items.front().shape();
    for (const Tensor& t : items) {
        if (t.shape() != shape) {
            throw ShapeError("stack: shape " + shape_string(t.shape()) + " differs from " + shape_string(shape));
        }
    }
    shape.insert(shape.begin(), static_cast<int>(items.size()));
    std::vector<double> values;
    values.reserve(element_count(shape));
    for (const Tensor& t : items) values.insert(values.end(), t.values().begin(), t.values().end());
    return Tensor(std::move(shape), std::move(values));
}

Tensor batch_item(const Tensor& batch, int n) {
    if (batch.rank() < 1 || n < 0 || n >= batch.dim(0)) {
        throw ShapeError("batch index " + std::to_string(n) + " out of range for " + shape_string(batch.shape()));
    }
    std::vector<int> shape(batch.shape().begin() + 1, batch.shape().end());
    const std::size_t stride = element_count(shape);
    const double* src = batch.data() + stride * static_cast<std::size_t>(n);
    return Tensor(std::move(shape), std::vector<double>(src, src + stride));
}

Tensor as_batch(const Tensor& item) {
    std::vector<int> shape = item.shape();
    shape.insert(shape.begin(), 1);
    return item.reshaped(std::move(shape));
}

void add_scaled(Tensor& dst, const Tensor& src, double scale) {
    if (!dst.same_shape(src)) {
        throw ShapeError("add: " + shape_string(dst.shape()) + " vs " + shape_string(src.shape()));
    }
    double* d = dst.data();
    const double* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += scale * s[i];
}

Tensor clamp01(const Tensor& t) {
    Tensor out = t;
    for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
    return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

std::size_t Rng::below(std::size_t n) {
    if (n == 0) return 0;
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r = 0;
    do {
        r = engine_();
    } while (r >= limit);
    return static_cast<std::size_t>(r % n);
}

}  // namespace suesr
