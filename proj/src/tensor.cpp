#include "shapemoire/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace shapemoire {

std::int64_t numel_of(const Dims& dims) {
    std::int64_t n = 1;
    for (auto d : dims) {
        if (d <= 0) {
            throw ShapeError("tensor dims must be positive, got " + dims_to_string(dims));
        }
        n *= d;
    }
    return n;
}

std::string dims_to_string(const Dims& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) os << 'x';
        os << dims[i];
    }
    os << ']';
    return os.str();
}

template <class Real>
BasicTensor<Real>::BasicTensor() = default;

template <class Real>
BasicTensor<Real>::BasicTensor(Dims dims, Real fill) : storage_(std::make_shared<Storage>()) {
    const auto n = numel_of(dims);
    storage_->dims = std::move(dims);
    storage_->data.assign(static_cast<std::size_t>(n), fill);
}

template <class Real>
BasicTensor<Real>::BasicTensor(Dims dims, std::vector<Real> values) : storage_(std::make_shared<Storage>()) {
    const auto n = numel_of(dims);
    if (static_cast<std::int64_t>(values.size()) != n) {
        throw ShapeError("tensor data length " + std::to_string(values.size()) + " does not match dims " +
                         dims_to_string(dims));
    }
    storage_->dims = std::move(dims);
    storage_->data = std::move(values);
}

template <class Real>
BasicTensor<Real> BasicTensor<Real>::scalar(Real value) {
    return BasicTensor(Dims{1}, value);
}

template <class Real>
const Dims& BasicTensor<Real>::dims() const {
    static const Dims empty;
    return storage_ ? storage_->dims : empty;
}

template <class Real>
std::int64_t BasicTensor<Real>::dim(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(r));
    }
    return storage_->dims[static_cast<std::size_t>(axis)];
}

template <class Real>
std::int64_t BasicTensor<Real>::numel() const {
    return storage_ ? static_cast<std::int64_t>(storage_->data.size()) : 0;
}

template <class Real>
std::span<const Real> BasicTensor<Real>::data() const {
    if (!storage_) return {};
    return storage_->data;
}

template <class Real>
std::span<Real> BasicTensor<Real>::mutable_data() {
    if (!storage_) return {};
    return storage_->data;
}

template <class Real>
Real BasicTensor<Real>::item() const {
    if (numel() != 1) {
        throw ShapeError("item() needs a single-element tensor, got " + dims_to_string(dims()));
    }
    return storage_->data[0];
}

template <class Real>
bool BasicTensor<Real>::requires_grad() const {
    return storage_ && storage_->requires_grad;
}

template <class Real>
void BasicTensor<Real>::set_requires_grad(bool value) {
    if (!storage_) throw Error("set_requires_grad on an undefined tensor");
    storage_->requires_grad = value;
}

template <class Real>
bool BasicTensor<Real>::has_grad() const {
    return storage_ && !storage_->grad.empty();
}

template <class Real>
std::span<const Real> BasicTensor<Real>::grad() const {
    if (!has_grad()) return {};
    return storage_->grad;
}

template <class Real>
std::span<Real> BasicTensor<Real>::grad_buffer() const {
    if (!storage_) throw Error("grad_buffer on an undefined tensor");
    if (storage_->grad.empty()) storage_->grad.assign(storage_->data.size(), Real(0));
    return storage_->grad;
}

template <class Real>
void BasicTensor<Real>::zero_grad() {
    if (has_grad()) std::fill(storage_->grad.begin(), storage_->grad.end(), Real(0));
}

template <class Real>
void BasicTensor<Real>::clear_grad() {
    if (storage_) {
        storage_->grad.clear();
        storage_->grad.shrink_to_fit();
    }
}

template <class Real>
BasicTensor<Real> BasicTensor<Real>::clone() const {
    if (!storage_) return {};
    return BasicTensor(storage_->dims, storage_->data);
}

template <class To, class From>
BasicTensor<To> cast(const BasicTensor<From>& t) {
    std::vector<To> values(t.data().begin(), t.data().end());
    return BasicTensor<To>(t.dims(), std::move(values));
}

namespace {

template <class Real>
thread_local GradTape<Real>* active_tape = nullptr;

}  // namespace

template <class Real>
GradTape<Real>::GradTape() : previous_(active_tape<Real>) {
    active_tape<Real> = this;
}

template <class Real>
GradTape<Real>::~GradTape() {
    active_tape<Real> = previous_;
}

template <class Real>
GradTape<Real>* GradTape<Real>::active() {
    return active_tape<Real>;
}

template <class Real>
void GradTape<Real>::record(std::string_view op, std::vector<Tensor> inputs, Tensor output, BackwardRule rule) {
    output.set_requires_grad(true);
    entries_.push_back(Entry{op, std::move(inputs), std::move(output), std::move(rule)});
}

template <class Real>
void GradTape<Real>::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward needs a scalar loss, got " + dims_to_string(loss.dims()));
    }
    if (!std::isfinite(static_cast<double>(loss.item()))) {
        throw NumericError("backward on a non-finite loss");
    }
    Tensor seed = loss;
    seed.grad_buffer()[0] += Real(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (!it->output.has_grad()) continue;
        it->rule(it->output.grad());
    }
}

template <class Real>
GradTape<Real>* recording_tape(std::initializer_list<const BasicTensor<Real>*> inputs) {
    auto* tape = GradTape<Real>::active();
    if (!tape) return nullptr;
    for (const auto* t : inputs) {
        if (t && t->requires_grad()) return tape;
    }
    return nullptr;
}

template <class Real>
Real max_abs(std::span<const Real> values) {
    Real m = 0;
    for (auto v : values) m = std::max(m, std::abs(v));
    return m;
}

template <class Real>
Real max_abs_diff(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
    if (a.dims() != b.dims()) {
        throw ShapeError("compare dims " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
    }
    Real m = 0;
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
    return m;
}

template <class Real>
double max_rel_error(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
    const double diff = static_cast<double>(max_abs_diff(a, b));
    const double scale = std::max(static_cast<double>(max_abs(b.data())), 1e-30);
    return diff / scale;
}

template <class Real>
bool all_finite(const BasicTensor<Real>& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](Real v) { return std::isfinite(v); });
}

template <class Real>
bool bitwise_equal(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
    if (a.dims() != b.dims()) return false;
    auto x = a.data();
    auto y = b.data();
    return std::equal(x.begin(), x.end(), y.begin(), y.end(), [](Real p, Real q) {
        return std::memcmp(&p, &q, sizeof(Real)) == 0;
    });
}

#define SHAPEMOIRE_INSTANTIATE(Real)                                                                 \
    template class BasicTensor<Real>;                                                               \
    template class GradTape<Real>;                                                                  \
    template GradTape<Real>* recording_tape(std::initializer_list<const BasicTensor<Real>*>);       \
    template Real max_abs(std::span<const Real>);                                                   \
    template Real max_abs_diff(const BasicTensor<Real>&, const BasicTensor<Real>&);                 \
    template double max_rel_error(const BasicTensor<Real>&, const BasicTensor<Real>&);              \
    template bool all_finite(const BasicTensor<Real>&);                                             \
    template bool bitwise_equal(const BasicTensor<Real>&, const BasicTensor<Real>&);

SHAPEMOIRE_INSTANTIATE(float)
SHAPEMOIRE_INSTANTIATE(double)

template BasicTensor<double> cast(const BasicTensor<float>&);
template BasicTensor<float> cast(const BasicTensor<double>&);
template BasicTensor<float> cast(const BasicTensor<float>&);
template BasicTensor<double> cast(const BasicTensor<double>&);

}  // namespace shapemoire
