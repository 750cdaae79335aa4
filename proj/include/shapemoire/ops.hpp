#pragma once

#include <utility>

#include "shapemoire/tensor.hpp"

// Differentiable tensor ops. Every op records itself on the active GradTape
// when any input requires grad; otherwise it is a plain forward computation.
//
// Image tensors are NHWC. Convolution kernels are [Kh, Kw, Cin, Cout].
namespace shapemoire {

// Records which side of its non-differentiable point every element of relu,
// clamp and l1_reduce falls on, folded into one signature. Two evaluations
// with equal signatures ran on the same smooth piece. Active for the calling
// thread while in scope.
class KinkMonitor {
public:
    KinkMonitor();
    ~KinkMonitor();
    KinkMonitor(const KinkMonitor&) = delete;
    KinkMonitor& operator=(const KinkMonitor&) = delete;

    static KinkMonitor* active();
    void add(unsigned side) {
        hash_ = (hash_ ^ side) * 0x100000001B3ull;
        ++count_;
    }
    std::uint64_t signature() const { return hash_ ^ count_; }

private:
    std::uint64_t hash_ = 0xCBF29CE484222325ull;
    std::uint64_t count_ = 0;
    KinkMonitor* previous_ = nullptr;
};

struct ConvGeometry {
    std::int64_t batch = 0, height = 0, width = 0, in_channels = 0;
    std::int64_t kernel_h = 0, kernel_w = 0, out_channels = 0;
    std::int64_t stride = 1, pad = 0;
    std::int64_t out_h = 0, out_w = 0;
};

// Validates dims and computes H' = (H + 2 pad - Kh) / stride + 1, requiring
// exact division.
ConvGeometry conv_geometry(const Dims& input, const Dims& kernel, std::int64_t stride, std::int64_t pad);

// Patch matrix for one image: row (oh*W'+ow), column ((kh*Kw+kw)*Cin+c).
// Entries outside the image read as zero.
template <class Real>
void im2col(const Real* image, const ConvGeometry& g, Real* cols);

template <class Real>
void col2im_add(const Real* cols, const ConvGeometry& g, Real* image);

template <class Real>
BasicTensor<Real> conv2d(const BasicTensor<Real>& input, const BasicTensor<Real>& kernel, std::int64_t stride = 1,
                         std::int64_t pad = 0);

template <class Real>
BasicTensor<Real> add(const BasicTensor<Real>& a, const BasicTensor<Real>& b);
template <class Real>
BasicTensor<Real> sub(const BasicTensor<Real>& a, const BasicTensor<Real>& b);
template <class Real>
BasicTensor<Real> scalar_mul(const BasicTensor<Real>& a, double c);
// s must hold one element; differentiable in both arguments.
template <class Real>
BasicTensor<Real> scale_by(const BasicTensor<Real>& a, const BasicTensor<Real>& s);
template <class Real>
BasicTensor<Real> relu(const BasicTensor<Real>& a);
// Forward clamp; gradient passes where lo < x < hi.
template <class Real>
BasicTensor<Real> clamp(const BasicTensor<Real>& a, double lo, double hi);

// bias has dims [C] where C is the last axis of x.
template <class Real>
BasicTensor<Real> add_channel_bias(const BasicTensor<Real>& x, const BasicTensor<Real>& bias);

// Repeats t along every axis where t has size 1 and dims does not.
template <class Real>
BasicTensor<Real> broadcast_to(const BasicTensor<Real>& t, const Dims& dims);

template <class Real>
BasicTensor<Real> reshape(const BasicTensor<Real>& t, const Dims& dims);

// Mean over axes [first, last] (inclusive) with kept unit dims.
template <class Real>
BasicTensor<Real> mean_over_axes(const BasicTensor<Real>& t, int first, int last);

// t - broadcast(mean_over_axes(t, first, last)), as one op.
template <class Real>
BasicTensor<Real> center_over_axes(const BasicTensor<Real>& t, int first, int last);

// Per-channel mean over every axis but the last: [..., C] -> [1, ..., 1, C].
template <class Real>
BasicTensor<Real> channel_mean(const BasicTensor<Real>& t);

template <class Real>
BasicTensor<Real> concat_axis0(const BasicTensor<Real>& a, const BasicTensor<Real>& b);

// Splits rows [0, n) and [n, N).
template <class Real>
std::pair<BasicTensor<Real>, BasicTensor<Real>> split_axis0(const BasicTensor<Real>& t, std::int64_t n);

template <class Real>
BasicTensor<Real> upsample_nearest_2x(const BasicTensor<Real>& x);

template <class Real>
BasicTensor<Real> avgpool_2x(const BasicTensor<Real>& x);

// Scalar reductions. Accumulation is in double.
template <class Real>
BasicTensor<Real> l1_reduce(const BasicTensor<Real>& a, const BasicTensor<Real>& b);
template <class Real>
BasicTensor<Real> mse_reduce(const BasicTensor<Real>& a, const BasicTensor<Real>& b);
template <class Real>
BasicTensor<Real> sum_squares(const BasicTensor<Real>& a);

// Valid-region 3x3 Sobel responses per channel: [N,H,W,C] -> [N,H-2,W-2,2C],
// channel 2c holds d/dx and 2c+1 holds d/dy of input channel c.
template <class Real>
BasicTensor<Real> sobel_gradients(const BasicTensor<Real>& x);

}  // namespace shapemoire
