#include "shapemoire/shapeconv.hpp"

#include <cmath>
#include <vector>

#include "shapemoire/ops.hpp"

namespace shapemoire {

template <class Real>
void BasicShapeConvParams<Real>::validate() const {
    if (!kernel.defined() || kernel.rank() != 4) {
        throw ShapeError("shapeconv: kernel must be [Kh, Kw, Cin, Cout], got " + dims_to_string(kernel.dims()));
    }
    if (!w_base.defined() || w_base.numel() != 1) {
        throw ShapeError("shapeconv: W_B must be a single weight, got " + dims_to_string(w_base.dims()));
    }
    const Dims expected{kernel_h() * kernel_w(), kernel_h(), kernel_w(), in_channels()};
    if (!w_shape.defined() || w_shape.dims() != expected) {
        throw ShapeError("shapeconv: W_S must be " + dims_to_string(expected) + ", got " +
                         dims_to_string(w_shape.dims()));
    }
}

template <class Real>
Decomposition<Real> decompose(const BasicTensor<Real>& t) {
    if (!t.defined() || t.rank() < 3) {
        throw ShapeError("decompose: need [Kh, Kw, C...], got " + dims_to_string(t.dims()));
    }
    auto base = mean_over_axes(t, 0, 1);
    auto shape = sub(t, broadcast_to(base, t.dims()));
    return {std::move(base), std::move(shape)};
}

template <class Real>
BasicTensor<Real> base_product(const BasicTensor<Real>& w_base, const BasicTensor<Real>& base) {
    return scale_by(base, w_base);
}

template <class Real>
BasicTensor<Real> shape_product(const BasicTensor<Real>& w_shape, const BasicTensor<Real>& shape) {
    if (!shape.defined() || shape.rank() != 3) {
        throw ShapeError("shape_product: shape must be [Kh, Kw, Cin], got " + dims_to_string(shape.dims()));
    }
    const auto kh = shape.dim(0), kw = shape.dim(1), cin = shape.dim(2);
    const auto n = kh * kw;
    if (!w_shape.defined() || w_shape.dims() != Dims{n, kh, kw, cin}) {
        throw ShapeError("shape_product: W_S " + dims_to_string(w_shape.dims()) + " does not match shape " +
                         dims_to_string(shape.dims()));
    }
    BasicTensor<Real> out(shape.dims());
    auto o = out.mutable_data();
    auto w = w_shape.data();
    auto s = shape.data();
    for (std::int64_t dst = 0; dst < n; ++dst) {
        for (std::int64_t c = 0; c < cin; ++c) {
            Real acc = 0;
            for (std::int64_t src = 0; src < n; ++src) acc += w[(src * n + dst) * cin + c] * s[src * cin + c];
            o[dst * cin + c] = acc;
        }
    }
    return out;
}

template <class Real>
BasicTensor<Real> identity_shape_weights(std::int64_t kernel_h, std::int64_t kernel_w, std::int64_t in_channels) {
    const auto n = kernel_h * kernel_w;
    BasicTensor<Real> w(Dims{n, kernel_h, kernel_w, in_channels});
    auto d = w.mutable_data();
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t c = 0; c < in_channels; ++c) d[(i * n + i) * in_channels + c] = Real(1);
    }
    return w;
}

namespace {

template <class T>
double strided_mean(const T* first, std::int64_t count, std::int64_t stride) {
    double acc = 0;
    for (std::int64_t i = 0; i < count; ++i) acc += first[i * stride];
    return acc / static_cast<double>(count);
}

}  // namespace

template <class Real>
BasicTensor<Real> shape_kernel(const BasicTensor<Real>& kernel, const BasicTensor<Real>& w_base,
                               const BasicTensor<Real>& w_shape) {
    BasicShapeConvParams<Real> view{kernel, w_base, w_shape};
    view.validate();
    const auto n = view.kernel_h() * view.kernel_w();
    const auto cin = view.in_channels();
    const auto cout = view.out_channels();
    const auto col = cin * cout;  // stride between spatial positions of K
    const double wb = w_base.item();
    auto k = kernel.data();
    auto ws = w_shape.data();

    // Accumulated in double and rounded once per element.
    BasicTensor<Real> fused(kernel.dims());
    auto out = fused.mutable_data();
    std::vector<double> mixed(static_cast<std::size_t>(n));
    for (std::int64_t c = 0; c < cin; ++c) {
        for (std::int64_t o = 0; o < cout; ++o) {
            const auto off = c * cout + o;
            for (std::int64_t i = 0; i < n; ++i) {
                double acc = 0;
                for (std::int64_t j = 0; j < n; ++j) {
                    acc += static_cast<double>(ws[(i * n + j) * cin + c]) * k[j * col + off];
                }
                mixed[static_cast<std::size_t>(i)] = acc;
            }
            const double k_mean = strided_mean(k.data() + off, n, col);
            const double m_mean = strided_mean(mixed.data(), n, 1);
            // Grouped so identity weights give back K bit-for-bit.
            const double shift = wb * k_mean - m_mean;
            for (std::int64_t i = 0; i < n; ++i) {
                out[i * col + off] = static_cast<Real>(mixed[static_cast<std::size_t>(i)] + shift);
            }
        }
    }

    if (auto* tape = recording_tape({&kernel, &w_base, &w_shape})) {
        tape->record("shape_kernel", {kernel, w_base, w_shape}, fused,
                     [kernel, w_base, w_shape, n, cin, cout, col](std::span<const Real> g) mutable {
                         const double wb = w_base.item();
                         auto k = kernel.data();
                         auto ws = w_shape.data();
                         const bool want_k = kernel.requires_grad();
                         const bool want_wb = w_base.requires_grad();
                         const bool want_ws = w_shape.requires_grad();
                         Real* dk = want_k ? kernel.grad_buffer().data() : nullptr;
                         Real* dws = want_ws ? w_shape.grad_buffer().data() : nullptr;
                         double dwb = 0;
                         std::vector<double> centered(static_cast<std::size_t>(n));
                         for (std::int64_t c = 0; c < cin; ++c) {
                             for (std::int64_t o = 0; o < cout; ++o) {
                                 const auto off = c * cout + o;
                                 double g_sum = 0;
                                 for (std::int64_t i = 0; i < n; ++i) g_sum += g[i * col + off];
                                 const double g_mean = g_sum / static_cast<double>(n);
                                 for (std::int64_t i = 0; i < n; ++i) {
                                     centered[static_cast<std::size_t>(i)] = g[i * col + off] - g_mean;
                                 }
                                 if (want_wb) dwb += g_sum * strided_mean(k.data() + off, n, col);
                                 if (want_k) {
                                     for (std::int64_t j = 0; j < n; ++j) {
                                         double acc = wb * g_mean;
                                         for (std::int64_t i = 0; i < n; ++i) {
                                             acc += ws[(i * n + j) * cin + c] * centered[static_cast<std::size_t>(i)];
                                         }
                                         dk[j * col + off] += static_cast<Real>(acc);
                                     }
                                 }
                                 if (want_ws) {
                                     for (std::int64_t i = 0; i < n; ++i) {
                                         const double gc = centered[static_cast<std::size_t>(i)];
                                         for (std::int64_t j = 0; j < n; ++j) {
                                             dws[(i * n + j) * cin + c] += static_cast<Real>(gc * k[j * col + off]);
                                         }
                                     }
                                 }
                             }
                         }
                         if (want_wb) w_base.grad_buffer()[0] += static_cast<Real>(dwb);
                     });
    }
    return fused;
}

template <class Real>
BasicTensor<Real> forward_patch(const BasicShapeConvParams<Real>& params, const BasicTensor<Real>& input) {
    params.validate();
    const auto g = conv_geometry(input.dims(), params.kernel.dims(), params.stride, params.pad);
    const auto kh = g.kernel_h, kw = g.kernel_w, cin = g.in_channels, cout = g.out_channels;
    const auto depth = kh * kw * cin;
    const auto rows = g.out_h * g.out_w;
    auto k = params.kernel.data();
    // Detached so nothing here reaches an active tape.
    const auto w_base = params.w_base.clone();
    const auto w_shape = params.w_shape.clone();

    BasicTensor<Real> out(Dims{g.batch, g.out_h, g.out_w, cout});
    auto o = out.mutable_data();
    std::vector<Real> cols(static_cast<std::size_t>(rows * depth));
    for (std::int64_t n = 0; n < g.batch; ++n) {
        im2col(input.data().data() + n * g.height * g.width * cin, g, cols.data());
        for (std::int64_t r = 0; r < rows; ++r) {
            const auto first = cols.begin() + r * depth;
            BasicTensor<Real> patch(Dims{kh, kw, cin}, std::vector<Real>(first, first + depth));
            auto [base, shape] = decompose(patch);
            auto recombined =
                add(broadcast_to(base_product(w_base, base), patch.dims()), shape_product(w_shape, shape));
            auto p = recombined.data();
            for (std::int64_t oc = 0; oc < cout; ++oc) {
                double acc = 0;
                for (std::int64_t i = 0; i < depth; ++i) acc += static_cast<double>(k[i * cout + oc]) * p[i];
                o[(n * rows + r) * cout + oc] = static_cast<Real>(acc);
            }
        }
    }
    return out;
}

template <class Real>
BasicTensor<Real> forward_kernel(const BasicShapeConvParams<Real>& params, const BasicTensor<Real>& input) {
    return conv2d(input, shape_kernel(params.kernel, params.w_base, params.w_shape), params.stride, params.pad);
}

template <class Real>
BasicFusedKernel<Real> fuse(const BasicShapeConvParams<Real>& params) {
    // Detached copies so the fused kernel never lands on an active tape.
    auto fused = shape_kernel(params.kernel.clone(), params.w_base.clone(), params.w_shape.clone());
    return {fused, params.stride, params.pad};
}

template <class Real>
BasicTensor<Real> init_kernel(std::int64_t kernel_h, std::int64_t kernel_w, std::int64_t in_channels,
                              std::int64_t out_channels, double kernel_init_scale, Rng& rng) {
    const auto fan_in = static_cast<double>(kernel_h * kernel_w * in_channels);
    const double bound = kernel_init_scale * std::sqrt(3.0 / fan_in);
    return random_uniform<Real>(Dims{kernel_h, kernel_w, in_channels, out_channels}, -bound, bound, rng);
}

template <class Real>
BasicShapeConvParams<Real> init_identity(std::int64_t kernel_h, std::int64_t kernel_w, std::int64_t in_channels,
                                         std::int64_t out_channels, double kernel_init_scale, Rng& rng,
                                         std::int64_t stride, std::int64_t pad) {
    if (kernel_h <= 0 || kernel_w <= 0 || in_channels <= 0 || out_channels <= 0) {
        throw ShapeError("init_identity: dims must be positive");
    }
    BasicShapeConvParams<Real> p;
    p.kernel = init_kernel<Real>(kernel_h, kernel_w, in_channels, out_channels, kernel_init_scale, rng);
    p.w_base = BasicTensor<Real>::scalar(Real(1));
    p.w_shape = identity_shape_weights<Real>(kernel_h, kernel_w, in_channels);
    p.stride = stride;
    p.pad = pad;
    return p;
}

#define SHAPEMOIRE_INSTANTIATE_SHAPECONV(Real)                                                                   \
    template struct BasicShapeConvParams<Real>;                                                                  \
    template Decomposition<Real> decompose(const BasicTensor<Real>&);                                            \
    template BasicTensor<Real> base_product(const BasicTensor<Real>&, const BasicTensor<Real>&);                 \
    template BasicTensor<Real> shape_product(const BasicTensor<Real>&, const BasicTensor<Real>&);                \
    template BasicTensor<Real> identity_shape_weights(std::int64_t, std::int64_t, std::int64_t);                \
    template BasicTensor<Real> shape_kernel(const BasicTensor<Real>&, const BasicTensor<Real>&,                  \
                                            const BasicTensor<Real>&);                                           \
    template BasicTensor<Real> forward_patch(const BasicShapeConvParams<Real>&, const BasicTensor<Real>&);       \
    template BasicTensor<Real> forward_kernel(const BasicShapeConvParams<Real>&, const BasicTensor<Real>&);      \
    template BasicFusedKernel<Real> fuse(const BasicShapeConvParams<Real>&);                                     \
    template BasicTensor<Real> init_kernel(std::int64_t, std::int64_t, std::int64_t, std::int64_t, double, Rng&); \
    template BasicShapeConvParams<Real> init_identity(std::int64_t, std::int64_t, std::int64_t, std::int64_t,    \
                                                      double, Rng&, std::int64_t, std::int64_t);

SHAPEMOIRE_INSTANTIATE_SHAPECONV(float)
SHAPEMOIRE_INSTANTIATE_SHAPECONV(double)

}  // namespace shapemoire
