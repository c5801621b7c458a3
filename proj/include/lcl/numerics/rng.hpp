#pragma once

#include <cstdint>
#include <random>

#include "lcl/numerics/tensor.hpp"

namespace lcl {

/// Seeded generator with platform-independent draws. The engine is the
/// standard 64-bit Mersenne Twister (bit-exact by the C++ standard); uniform
/// and normal variates are derived here rather than through
/// std::*_distribution, whose algorithms vary between standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Independent stream derived from (seed, stream id) via splitmix64.
    static Rng derive(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer on [0, n).
    std::size_t below(std::size_t n);
    /// Standard normal (Box-Muller, both variates used).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    Tensor normal_tensor(Shape shape, double stddev);

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace lcl
