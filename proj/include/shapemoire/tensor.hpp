#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace shapemoire {

using Dims = std::vector<std::int64_t>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand dims disagree (channel counts, batch sizes, elementwise shapes).
class ShapeError : public Error {
public:
    using Error::Error;
};

// Convolution / pooling geometry that does not tile exactly.
class GeometryError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public IoError {
public:
    using IoError::IoError;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

std::int64_t numel_of(const Dims& dims);
std::string dims_to_string(const Dims& dims);

/// Dense row-major tensor with an optional gradient slot.
///
/// Copies share storage (handle semantics), which is what lets the tape hold
/// references to inputs and outputs. Use clone() for a deep copy. Values are
/// treated as immutable once an op has produced them; only parameters are
/// mutated in place, by initializers and optimizers.
template <class Real>
class BasicTensor {
public:
    using value_type = Real;

    BasicTensor();
    explicit BasicTensor(Dims dims, Real fill = Real(0));
    BasicTensor(Dims dims, std::vector<Real> values);

    static BasicTensor scalar(Real value);

    bool defined() const { return storage_ != nullptr; }
    const Dims& dims() const;
    std::int64_t dim(int axis) const;
    int rank() const { return static_cast<int>(dims().size()); }
    std::int64_t numel() const;

    std::span<const Real> data() const;
    std::span<Real> mutable_data();
    Real item() const;

    bool requires_grad() const;
    void set_requires_grad(bool value);

    bool has_grad() const;
    std::span<const Real> grad() const;
    // Allocates a zero gradient on first use.
    std::span<Real> grad_buffer() const;
    void zero_grad();
    void clear_grad();

    BasicTensor clone() const;
    bool is_same(const BasicTensor& other) const { return storage_ == other.storage_; }

private:
    struct Storage {
        Dims dims;
        std::vector<Real> data;
        std::vector<Real> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Storage> storage_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <class To, class From>
BasicTensor<To> cast(const BasicTensor<From>& t);

/// Ordered record of differentiable ops for one forward pass.
///
/// Constructing a tape makes it the active tape for the calling thread until
/// it is destroyed; ops whose inputs require grad append an entry to it.
/// Tapes nest (the previous tape is restored on destruction).
template <class Real>
class GradTape {
public:
    using Tensor = BasicTensor<Real>;
    // Receives the gradient of the recorded output.
    using BackwardRule = std::function<void(std::span<const Real> grad_out)>;

    struct Entry {
        std::string_view op;
        std::vector<Tensor> inputs;
        Tensor output;
        BackwardRule rule;
    };

    GradTape();
    ~GradTape();
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    static GradTape* active();

    void record(std::string_view op, std::vector<Tensor> inputs, Tensor output, BackwardRule rule);

    // Seeds d(loss)/d(loss) = 1 and replays entries in reverse order.
    // Gradients accumulate additively into every tensor that requires grad.
    void backward(const Tensor& loss);

    std::size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }

private:
    std::vector<Entry> entries_;
    GradTape* previous_ = nullptr;
};

// Returns the active tape when any input requires grad, else nullptr.
template <class Real>
GradTape<Real>* recording_tape(std::initializer_list<const BasicTensor<Real>*> inputs);

template <class Real>
Real max_abs(std::span<const Real> values);

template <class Real>
Real max_abs_diff(const BasicTensor<Real>& a, const BasicTensor<Real>& b);

// max|a - b| / max(max|b|, tiny): error measured against the reference b's scale.
template <class Real>
double max_rel_error(const BasicTensor<Real>& a, const BasicTensor<Real>& b);

template <class Real>
bool all_finite(const BasicTensor<Real>& t);

template <class Real>
bool bitwise_equal(const BasicTensor<Real>& a, const BasicTensor<Real>& b);

}  // namespace shapemoire
