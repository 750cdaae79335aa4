#include "shapemoire/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "shapemoire/ops.hpp"

namespace shapemoire {

namespace {

struct Evaluation {
    double value;
    std::uint64_t piece;  // KinkMonitor signature
};

template <class Real>
Evaluation evaluate(const std::function<BasicTensor<Real>()>& loss) {
    KinkMonitor monitor;
    const auto value = static_cast<double>(loss().item());
    if (!std::isfinite(value)) throw NumericError("grad_check: loss evaluated to a non-finite value");
    return {value, monitor.signature()};
}

}  // namespace

template <class Real>
GradCheckReport grad_check(const std::function<BasicTensor<Real>()>& loss, std::vector<BasicTensor<Real>> params,
                           double eps) {
    if (!(eps >= 1e-4 && eps <= 1e-2)) throw ValidationError("grad_check: eps must lie in [1e-4, 1e-2]");

    for (auto& p : params) {
        p.set_requires_grad(true);
        p.clear_grad();
    }
    Evaluation center{};
    {
        GradTape<Real> tape;
        KinkMonitor monitor;
        auto value = loss();
        if (!std::isfinite(static_cast<double>(value.item()))) {
            throw NumericError("grad_check: loss evaluated to a non-finite value");
        }
        center = {static_cast<double>(value.item()), monitor.signature()};
        tape.backward(value);
    }

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        auto values = p.mutable_data();
        const std::vector<Real> analytic = p.has_grad() ? std::vector<Real>(p.grad().begin(), p.grad().end())
                                                        : std::vector<Real>(values.size(), Real(0));
        for (std::size_t i = 0; i < values.size(); ++i) {
            const Real saved = values[i];
            const Real up = static_cast<Real>(saved + eps);
            const Real down = static_cast<Real>(saved - eps);
            values[i] = up;
            const auto f_up = evaluate(loss);
            values[i] = down;
            const auto f_down = evaluate(loss);
            values[i] = saved;

            // A step that lands on another smooth piece measures a different
            // derivative; difference only across the side that stays put.
            const bool up_ok = f_up.piece == center.piece;
            const bool down_ok = f_down.piece == center.piece;
            double numeric;
            if (up_ok && down_ok) {
                numeric = (f_up.value - f_down.value) / (static_cast<double>(up) - static_cast<double>(down));
            } else if (up_ok) {
                numeric = (f_up.value - center.value) / (static_cast<double>(up) - static_cast<double>(saved));
                ++report.one_sided;
            } else if (down_ok) {
                numeric = (center.value - f_down.value) / (static_cast<double>(saved) - static_cast<double>(down));
                ++report.one_sided;
            } else {
                ++report.unmeasurable;
                continue;
            }
            const double exact = static_cast<double>(analytic[i]);
            const double err =
                std::abs(exact - numeric) / std::max({std::abs(exact), std::abs(numeric), 1e-8});
            ++report.elements_checked;
            if (err > report.max_relative_error) {
                report.max_relative_error = err;
                report.worst_param = pi;
                report.worst_element = static_cast<std::int64_t>(i);
                report.worst_analytic = exact;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

template GradCheckReport grad_check(const std::function<BasicTensor<float>()>&, std::vector<BasicTensor<float>>,
                                    double);
template GradCheckReport grad_check(const std::function<BasicTensor<double>()>&, std::vector<BasicTensor<double>>,
                                    double);

}  // namespace shapemoire
