#pragma once

#include <cstdint>
#include <random>

#include "shapemoire/tensor.hpp"

namespace shapemoire {

// Seeded engine with distribution code we own, so streams are identical
// across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }

    // Box-Muller; consumes two uniforms per call.
    double normal();

private:
    std::mt19937_64 engine_;
};

template <class Real>
BasicTensor<Real> random_uniform(const Dims& dims, double lo, double hi, Rng& rng);

template <class Real>
BasicTensor<Real> random_normal(const Dims& dims, double stddev, Rng& rng);

}  // namespace shapemoire
