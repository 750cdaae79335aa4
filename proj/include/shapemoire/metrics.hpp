#pragma once

#include <cstdint>
#include <vector>

#include "shapemoire/tensor.hpp"

namespace shapemoire {

// Returned by psnr() when the two images are identical.
inline constexpr double kPsnrCapDb = 100.0;

struct MetricReport {
    double psnr_db = 0;
    double ssim = 0;
    std::int64_t n_images = 0;
};

// Images are [H, W, C] or [N, H, W, C]; batches are scored as one signal.
double psnr(const Tensor& a, const Tensor& b, double max_val = 1.0);

// Mean local SSIM of the channel-mean luminance, 11x11 Gaussian window with
// sigma 1.5, C1 = 0.01^2, C2 = 0.03^2 (unit dynamic range), valid region only.
// Batches return the mean over images. Throws GeometryError below 11x11.
double ssim(const Tensor& a, const Tensor& b);

double l1(const Tensor& a, const Tensor& b);
// L1 distance between valid-region Sobel gradient maps.
double lp_proxy(const Tensor& a, const Tensor& b);

// Per-image PSNR and SSIM averaged over the batch axis of [N, H, W, C] inputs.
MetricReport evaluate_batch(const Tensor& restored, const Tensor& reference);

// Running average over batches.
class MetricAccumulator {
public:
    void add(const Tensor& restored, const Tensor& reference);
    MetricReport report() const;

private:
    double psnr_sum_ = 0;
    double ssim_sum_ = 0;
    std::int64_t n_ = 0;
};

// Differentiable training losses.
template <class Real>
BasicTensor<Real> l1_loss(const BasicTensor<Real>& prediction, const BasicTensor<Real>& target);

template <class Real>
BasicTensor<Real> lp_proxy_loss(const BasicTensor<Real>& prediction, const BasicTensor<Real>& target);

}  // namespace shapemoire
