#pragma once

#include "shapemoire/random.hpp"
#include "shapemoire/tensor.hpp"

// Shape-aware convolution.
//
// A patch P (Kh x Kw x Cin) is split into a per-channel base mean(P) and a
// shape P - mean(P). The layer reweights the base with a scalar W_B, mixes the
// shape's Kh*Kw spatial positions per channel with W_S, and convolves the
// recombined patch with K. Because every step is linear in P, the same output
// is produced by a single vanilla convolution with a recombined kernel K_BS,
// which is how the layer trains (forward_kernel) and deploys (fuse).
//
// W_S has dims [Kh*Kw, Kh, Kw, Cin]. The leading axis indexes the source patch
// position, flattened row-major (kh outer, kw inner); the next two axes give
// the destination position:
//
//   shape_product(W_S, S)[kh, kw, c] = sum_i W_S[i, kh, kw, c] * S[i, c]
//
// Moving the product onto the kernel needs its adjoint followed by
// re-centering, so the fused kernel is
//
//   M[i, c, o]    = sum_j W_S[i, j, c] * K[j, c, o]
//   K_BS[i, c, o] = W_B * mean_j K[j, c, o] + M[i, c, o] - mean_j M[j, c, o]
//
// At identity weights M == K and the two means coincide, so K_BS == K exactly.
namespace shapemoire {

template <class Real>
struct BasicShapeConvParams {
    BasicTensor<Real> kernel;   // K   [Kh, Kw, Cin, Cout]
    BasicTensor<Real> w_base;   // W_B [1]
    BasicTensor<Real> w_shape;  // W_S [Kh*Kw, Kh, Kw, Cin]
    std::int64_t stride = 1;
    std::int64_t pad = 0;

    std::int64_t kernel_h() const { return kernel.dim(0); }
    std::int64_t kernel_w() const { return kernel.dim(1); }
    std::int64_t in_channels() const { return kernel.dim(2); }
    std::int64_t out_channels() const { return kernel.dim(3); }

    // Kh^2 * Kw^2 * Cin + 1: what the layer adds on top of K during training.
    std::int64_t extra_parameter_count() const { return w_shape.numel() + w_base.numel(); }

    // Throws ShapeError unless W_B and W_S match K.
    void validate() const;
};

template <class Real>
struct BasicFusedKernel {
    BasicTensor<Real> kernel;  // K_BS, same dims as K
    std::int64_t stride = 1;
    std::int64_t pad = 0;

    std::int64_t parameter_count() const { return kernel.numel(); }
};

using ShapeConvParams = BasicShapeConvParams<float>;
using FusedKernel = BasicFusedKernel<float>;

template <class Real>
struct Decomposition {
    BasicTensor<Real> base;   // [1, 1, C...]
    BasicTensor<Real> shape;  // same dims as the input
};

// Base/shape split over the two leading (spatial) axes; base + shape == t.
template <class Real>
Decomposition<Real> decompose(const BasicTensor<Real>& t);

template <class Real>
BasicTensor<Real> base_product(const BasicTensor<Real>& w_base, const BasicTensor<Real>& base);

// Forward only; see the header comment for the index convention.
template <class Real>
BasicTensor<Real> shape_product(const BasicTensor<Real>& w_shape, const BasicTensor<Real>& shape);

// W_S with W_S[i, kh, kw, c] = 1 iff i == kh * Kw + kw.
template <class Real>
BasicTensor<Real> identity_shape_weights(std::int64_t kernel_h, std::int64_t kernel_w, std::int64_t in_channels);

// Differentiable K_BS as a function of (K, W_B, W_S).
template <class Real>
BasicTensor<Real> shape_kernel(const BasicTensor<Real>& kernel, const BasicTensor<Real>& w_base,
                               const BasicTensor<Real>& w_shape);

// Recombines every sliding patch, then convolves it with K. Used as the
// reference for forward_kernel; not recorded on the tape.
template <class Real>
BasicTensor<Real> forward_patch(const BasicShapeConvParams<Real>& params, const BasicTensor<Real>& input);

// conv2d(input, K_BS). The training path.
template <class Real>
BasicTensor<Real> forward_kernel(const BasicShapeConvParams<Real>& params, const BasicTensor<Real>& input);

template <class Real>
BasicFusedKernel<Real> fuse(const BasicShapeConvParams<Real>& params);

// W_B = 1, W_S = identity, K ~ U(-a, a) with a = scale * sqrt(3 / (Kh*Kw*Cin)),
// i.e. standard deviation scale / sqrt(fan_in).
template <class Real>
BasicShapeConvParams<Real> init_identity(std::int64_t kernel_h, std::int64_t kernel_w, std::int64_t in_channels,
                                         std::int64_t out_channels, double kernel_init_scale, Rng& rng,
                                         std::int64_t stride = 1, std::int64_t pad = 0);

// The fan-in-scaled kernel draw used by init_identity, for vanilla layers.
template <class Real>
BasicTensor<Real> init_kernel(std::int64_t kernel_h, std::int64_t kernel_w, std::int64_t in_channels,
                              std::int64_t out_channels, double kernel_init_scale, Rng& rng);

}  // namespace shapemoire
