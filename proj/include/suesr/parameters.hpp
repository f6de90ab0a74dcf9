#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "suesr/aligned.hpp"

namespace suesr {

struct ParameterArray {
    std::string name;
    std::vector<int> shape;
    AlignedVector values;
};

/// Ordered, named collection of parameter arrays. Iteration order is the
/// registration order, which is fixed by the owning architecture.
class ParameterSet {
public:
    /// Registers a zero-filled array and returns its index.
    std::size_t add(const std::string& name, std::vector<int> shape);

    std::size_t size() const noexcept { return arrays_.size(); }
    std::size_t total_count() const noexcept;
    bool contains(const std::string& name) const { return lookup_.count(name) != 0; }
    std::size_t index_of(const std::string& name) const;

    ParameterArray& operator[](std::size_t i) { return arrays_[i]; }
    const ParameterArray& operator[](std::size_t i) const { return arrays_[i]; }
    ParameterArray& at(const std::string& name) { return arrays_[index_of(name)]; }
    const ParameterArray& at(const std::string& name) const { return arrays_[index_of(name)]; }

    auto begin() noexcept { return arrays_.begin(); }
    auto end() noexcept { return arrays_.end(); }
    auto begin() const noexcept { return arrays_.begin(); }
    auto end() const noexcept { return arrays_.end(); }

    /// Same names and shapes, all values zero.
    ParameterSet zeros_like() const;
    void set_zero();
    bool same_layout(const ParameterSet& other) const;
    bool all_finite() const;
    /// Rounds every value to the nearest float32, the precision used on disk.
    void round_to_float32();

    /// Flattened view of all values in registration order.
    std::vector<double> flatten() const;
    void assign_flat(const std::vector<double>& flat);

private:
    std::vector<ParameterArray> arrays_;
    std::unordered_map<std::string, std::size_t> lookup_;
};

}  // namespace suesr
