#pragma once

#include <functional>
#include <string>
#include <vector>

#include "shapemoire/tensor.hpp"

namespace shapemoire {

struct GradCheckReport {
    // max over elements of |analytic - fd| / max(|analytic|, |fd|, 1e-8)
    double max_relative_error = 0;
    std::size_t worst_param = 0;
    std::int64_t worst_element = 0;
    double worst_analytic = 0;
    double worst_numeric = 0;
    std::int64_t elements_checked = 0;
    // Elements whose +eps or -eps step crossed a relu/clamp/L1 kink and were
    // measured one-sided; elements where both steps crossed are unmeasurable
    // and excluded from max_relative_error.
    std::int64_t one_sided = 0;
    std::int64_t unmeasurable = 0;
};

/// Compares tape gradients of a scalar function against central differences.
///
/// `loss` must rebuild its graph from `params` on every call; it is invoked
/// once under a GradTape and twice per parameter element without one.
/// Parameter gradients are cleared on entry and hold the analytic gradient on
/// return. Kink crossings are detected with KinkMonitor (see ops.hpp) and
/// handled as described on GradCheckReport. Throws NumericError if any evaluation is non-finite and
/// ValidationError if eps lies outside [1e-4, 1e-2].
template <class Real>
GradCheckReport grad_check(const std::function<BasicTensor<Real>()>& loss, std::vector<BasicTensor<Real>> params,
                           double eps = 1e-3);

}  // namespace shapemoire
