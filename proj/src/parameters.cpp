#include "suesr/parameters.hpp"

#include <algorithm>
#include <cmath>

#include "suesr/errors.hpp"
#include "suesr/tensor.hpp"

namespace suesr {

std::size_t ParameterSet::add(const std::string& name, std::vector<int> shape) {
    if (contains(name)) throw ShapeError("duplicate parameter name '" + name + "'");
    const std::size_t count = element_count(shape);
    arrays_.push_back({name, std::move(shape), AlignedVector(count, 0.0)});
    lookup_.emplace(name, arrays_.size() - 1);
    return arrays_.size() - 1;
}

std::size_t ParameterSet::total_count() const noexcept {
    std::size_t n = 0;
    for (const auto& a : arrays_) n += a.values.size();
    return n;
}

std::size_t ParameterSet::index_of(const std::string& name) const {
    auto it = lookup_.find(name);
    if (it == lookup_.end()) throw ShapeError("unknown parameter '" + name + "'");
    return it->second;
}

ParameterSet ParameterSet::zeros_like() const {
    ParameterSet out;
    for (const auto& a : arrays_) out.add(a.name, a.shape);
    return out;
}

void ParameterSet::set_zero() {
    for (auto& a : arrays_) std::fill(a.values.begin(), a.values.end(), 0.0);
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
    if (arrays_.size() != other.arrays_.size()) return false;
    for (std::size_t i = 0; i < arrays_.size(); ++i) {
        if (arrays_[i].name != other.arrays_[i].name || arrays_[i].shape != other.arrays_[i].shape) return false;
    }
    return true;
}

bool ParameterSet::all_finite() const {
    for (const auto& a : arrays_) {
        for (double v : a.values) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

void ParameterSet::round_to_float32() {
    for (auto& a : arrays_) {
        for (double& v : a.values) v = static_cast<double>(static_cast<float>(v));
    }
}

std::vector<double> ParameterSet::flatten() const {
    std::vector<double> flat;
    flat.reserve(total_count());
    for (const auto& a : arrays_) flat.insert(flat.end(), a.values.begin(), a.values.end());
    return flat;
}

void ParameterSet::assign_flat(const std::vector<double>& flat) {
    if (flat.size() != total_count()) throw ShapeError("flat parameter vector has the wrong length");
    std::size_t offset = 0;
    for (auto& a : arrays_) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), a.values.size(), a.values.begin());
        offset += a.values.size();
    }
}

}  // namespace suesr
