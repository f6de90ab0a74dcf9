#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "suesr/aligned.hpp"

namespace suesr {

/// Dense row-major array of doubles. Images are C x H x W, batches N x C x H x W.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> values);

    const std::vector<int>& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    int dim(int axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& at(int c, int y, int x);
    double at(int c, int y, int x) const;
    double& at(int n, int c, int y, int x);
    double at(int n, int c, int y, int x) const;

    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
    bool all_finite() const noexcept;
    void fill(double value);

    Tensor reshaped(std::vector<int> shape) const;

private:
    std::vector<int> shape_;
    AlignedVector data_;
};

std::string shape_string(const std::vector<int>& shape);
std::size_t element_count(const std::vector<int>& shape);

/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);
/// Extracts item `n` of a batch (drops the leading axis).
Tensor batch_item(const Tensor& batch, int n);
/// Adds a leading unit axis.
Tensor as_batch(const Tensor& item);

/// dst += scale * src (shapes must match).
void add_scaled(Tensor& dst, const Tensor& src, double scale = 1.0);
Tensor clamp01(const Tensor& t);

}  // namespace suesr
