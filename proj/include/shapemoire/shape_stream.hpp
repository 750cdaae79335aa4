#pragma once

#include <functional>

#include "shapemoire/tensor.hpp"

// Image-level shape supervision. During training the mean-centred copy of
// each input rides along in the same batch, through the same weights, and is
// scored against the mean-centred target. At inference the second stream is
// simply not built.
namespace shapemoire {

inline constexpr double kDefaultLambda = 0.1;

// Subtracts each image's per-channel spatial mean. [N, H, W, C] in and out.
template <class Real>
BasicTensor<Real> shape_transform(const BasicTensor<Real>& images);

template <class Real>
struct BasicDualBatch {
    BasicTensor<Real> combined;  // rows [0, n) raw, rows [n, 2n) shape stream
    std::int64_t n = 0;
};
using DualBatch = BasicDualBatch<float>;

template <class Real>
BasicDualBatch<Real> make_dual_batch(const BasicTensor<Real>& moire);

struct LossReport {
    double l_base = 0;
    double l_shape = 0;
    double l_total = 0;
    double lambda = kDefaultLambda;
};

template <class Real>
struct BasicLoss {
    BasicTensor<Real> total;  // differentiable scalar
    LossReport report;
};

// L1(out, gt) + lambda * lp_proxy(out, gt).
template <class Real>
BasicLoss<Real> base_loss(const BasicTensor<Real>& output, const BasicTensor<Real>& gt, double lambda);

// Splits a 2N-row output, scores the raw half against gt and the shape half
// against shape_transform(gt), and sums the two. shape_weight scales the shape
// term inside l_total only; at the default 1.0 the sum is unweighted.
template <class Real>
BasicLoss<Real> total_loss(const BasicTensor<Real>& output, const BasicTensor<Real>& gt, double lambda,
                           double shape_weight = 1.0);

template <class Real>
using Model = std::function<BasicTensor<Real>(const BasicTensor<Real>&)>;

// Raw-stream forward only.
template <class Real>
BasicTensor<Real> inference(const Model<Real>& model, const BasicTensor<Real>& moire);

}  // namespace shapemoire
