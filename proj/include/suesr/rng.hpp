#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace suesr {

/// Derives an independent stream seed from (base, index) with a splitmix64 finalizer.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// Reproducible random source. Distributions are implemented locally so that
/// streams do not depend on the standard library's distribution algorithms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    /// Uniform integer on [0, n).
    std::size_t below(std::size_t n);

    template <typename RandomIt>
    void shuffle(RandomIt first, RandomIt last) {
        const auto n = static_cast<std::size_t>(last - first);
        for (std::size_t i = n; i > 1; --i) {
            std::swap(first[i - 1], first[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace suesr
