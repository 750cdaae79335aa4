#include "shapemoire/metrics.hpp"

#include <cmath>

#include "shapemoire/ops.hpp"

namespace shapemoire {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.defined() || !b.defined() || a.dims() != b.dims()) {
        throw ShapeError(std::string(what) + ": dims " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
    }
}

template <class Real>
BasicTensor<Real> as_batch(const BasicTensor<Real>& t) {
    if (t.rank() == 4) return t;
    if (t.rank() == 3) return reshape(t, Dims{1, t.dim(0), t.dim(1), t.dim(2)});
    throw ShapeError("expected an [H, W, C] or [N, H, W, C] image, got " + dims_to_string(t.dims()));
}

std::vector<double> gaussian_window() {
    constexpr int size = 11;
    constexpr double sigma = 1.5;
    std::vector<double> w(size * size);
    double total = 0;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double dy = y - size / 2;
            const double dx = x - size / 2;
            w[y * size + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            total += w[y * size + x];
        }
    }
    for (auto& v : w) v /= total;
    return w;
}

double ssim_gray(const std::vector<double>& x, const std::vector<double>& y, std::int64_t h, std::int64_t w) {
    constexpr int size = 11;
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    static const std::vector<double> window = gaussian_window();
    double total = 0;
    std::int64_t count = 0;
    for (std::int64_t i = 0; i + size <= h; ++i) {
        for (std::int64_t j = 0; j + size <= w; ++j) {
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            for (int u = 0; u < size; ++u) {
                for (int v = 0; v < size; ++v) {
                    const double g = window[u * size + v];
                    const double a = x[(i + u) * w + j + v];
                    const double b = y[(i + u) * w + j + v];
                    mx += g * a;
                    my += g * b;
                    sxx += g * a * a;
                    syy += g * b * b;
                    sxy += g * a * b;
                }
            }
            const double vx = sxx - mx * mx;
            const double vy = syy - my * my;
            const double cov = sxy - mx * my;
            total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

std::vector<double> luminance(std::span<const float> image, std::int64_t pixels, std::int64_t channels) {
    std::vector<double> gray(static_cast<std::size_t>(pixels));
    for (std::int64_t p = 0; p < pixels; ++p) {
        double s = 0;
        for (std::int64_t c = 0; c < channels; ++c) s += image[p * channels + c];
        gray[static_cast<std::size_t>(p)] = s / static_cast<double>(channels);
    }
    return gray;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double max_val) {
    require_same(a, b, "psnr");
    auto x = a.data();
    auto y = b.data();
    double acc = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x[i]) - y[i];
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(x.size());
    if (mse == 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(max_val * max_val / mse));
}

double ssim(const Tensor& a, const Tensor& b) {
    require_same(a, b, "ssim");
    const auto x = as_batch(a);
    const auto y = as_batch(b);
    const auto n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (h < 11 || w < 11) throw GeometryError("ssim: images must be at least 11x11, got " + dims_to_string(a.dims()));
    const auto pixels = h * w;
    double total = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto xs = x.data().subspan(static_cast<std::size_t>(i * pixels * c), static_cast<std::size_t>(pixels * c));
        const auto ys = y.data().subspan(static_cast<std::size_t>(i * pixels * c), static_cast<std::size_t>(pixels * c));
        total += ssim_gray(luminance(xs, pixels, c), luminance(ys, pixels, c), h, w);
    }
    return total / static_cast<double>(n);
}

double l1(const Tensor& a, const Tensor& b) {
    require_same(a, b, "l1");
    return l1_reduce(a.clone(), b.clone()).item();
}

double lp_proxy(const Tensor& a, const Tensor& b) {
    require_same(a, b, "lp_proxy");
    return lp_proxy_loss(a.clone(), b.clone()).item();
}

MetricReport evaluate_batch(const Tensor& restored, const Tensor& reference) {
    MetricAccumulator acc;
    acc.add(restored, reference);
    return acc.report();
}

void MetricAccumulator::add(const Tensor& restored, const Tensor& reference) {
    require_same(restored, reference, "metrics");
    const auto x = as_batch(restored);
    const auto y = as_batch(reference);
    const auto n = x.dim(0);
    const auto per = x.numel() / n;
    Dims one{1, x.dim(1), x.dim(2), x.dim(3)};
    for (std::int64_t i = 0; i < n; ++i) {
        auto first_x = x.data().begin() + i * per;
        auto first_y = y.data().begin() + i * per;
        Tensor xi(one, std::vector<float>(first_x, first_x + per));
        Tensor yi(one, std::vector<float>(first_y, first_y + per));
        psnr_sum_ += psnr(xi, yi);
        ssim_sum_ += ssim(xi, yi);
        ++n_;
    }
}

MetricReport MetricAccumulator::report() const {
    if (n_ == 0) return {};
    return {psnr_sum_ / static_cast<double>(n_), ssim_sum_ / static_cast<double>(n_), n_};
}

template <class Real>
BasicTensor<Real> l1_loss(const BasicTensor<Real>& prediction, const BasicTensor<Real>& target) {
    return l1_reduce(prediction, target);
}

template <class Real>
BasicTensor<Real> lp_proxy_loss(const BasicTensor<Real>& prediction, const BasicTensor<Real>& target) {
    if (prediction.dims() != target.dims()) {
        throw ShapeError("lp_proxy: dims " + dims_to_string(prediction.dims()) + " vs " +
                         dims_to_string(target.dims()));
    }
    return l1_reduce(sobel_gradients(as_batch(prediction)), sobel_gradients(as_batch(target)));
}

template BasicTensor<float> l1_loss(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> l1_loss(const BasicTensor<double>&, const BasicTensor<double>&);
template BasicTensor<float> lp_proxy_loss(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> lp_proxy_loss(const BasicTensor<double>&, const BasicTensor<double>&);

}  // namespace shapemoire
