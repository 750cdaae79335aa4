#include "shapemoire/random.hpp"

#include <cmath>
#include <numbers>

namespace shapemoire {

double Rng::normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <class Real>
BasicTensor<Real> random_uniform(const Dims& dims, double lo, double hi, Rng& rng) {
    BasicTensor<Real> t(dims);
    for (auto& v : t.mutable_data()) v = static_cast<Real>(rng.uniform(lo, hi));
    return t;
}

template <class Real>
BasicTensor<Real> random_normal(const Dims& dims, double stddev, Rng& rng) {
    BasicTensor<Real> t(dims);
    for (auto& v : t.mutable_data()) v = static_cast<Real>(stddev * rng.normal());
    return t;
}

template BasicTensor<float> random_uniform(const Dims&, double, double, Rng&);
template BasicTensor<double> random_uniform(const Dims&, double, double, Rng&);
template BasicTensor<float> random_normal(const Dims&, double, Rng&);
template BasicTensor<double> random_normal(const Dims&, double, Rng&);

}  // namespace shapemoire
