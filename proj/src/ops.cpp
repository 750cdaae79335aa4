#include "shapemoire/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "shapemoire/parallel.hpp"

namespace shapemoire {

namespace {

template <class Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using MatrixMap = Eigen::Map<RowMatrix<Real>>;
template <class Real>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Real>>;

void require_same_dims(const Dims& a, const Dims& b, const char* op) {
    if (a != b) {
        throw ShapeError(std::string(op) + ": dims " + dims_to_string(a) + " vs " + dims_to_string(b));
    }
}

void require_defined(bool defined, const char* op) {
    if (!defined) throw ShapeError(std::string(op) + ": undefined tensor");
}

void require_rank(const Dims& d, std::size_t rank, const char* op) {
    if (d.size() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + dims_to_string(d));
    }
}

template <class Real>
BasicTensor<Real> scalar_result(double value) {
    return BasicTensor<Real>(Dims{1}, static_cast<Real>(value));
}

}  // namespace

namespace {
thread_local KinkMonitor* active_monitor = nullptr;
}  // namespace

KinkMonitor::KinkMonitor() : previous_(active_monitor) { active_monitor = this; }
KinkMonitor::~KinkMonitor() { active_monitor = previous_; }
KinkMonitor* KinkMonitor::active() { return active_monitor; }

ConvGeometry conv_geometry(const Dims& input, const Dims& kernel, std::int64_t stride, std::int64_t pad) {
    require_rank(input, 4, "conv2d input");
    require_rank(kernel, 4, "conv2d kernel");
    if (stride < 1) throw GeometryError("conv2d: stride must be >= 1");
    if (pad < 0) throw GeometryError("conv2d: pad must be >= 0");
    ConvGeometry g;
    g.batch = input[0];
    g.height = input[1];
    g.width = input[2];
    g.in_channels = input[3];
    g.kernel_h = kernel[0];
    g.kernel_w = kernel[1];
    g.out_channels = kernel[3];
    g.stride = stride;
    g.pad = pad;
    if (kernel[2] != g.in_channels) {
        throw ShapeError("conv2d: input has " + std::to_string(g.in_channels) + " channels, kernel expects " +
                         std::to_string(kernel[2]));
    }
    const auto span_h = g.height + 2 * pad - g.kernel_h;
    const auto span_w = g.width + 2 * pad - g.kernel_w;
    if (span_h < 0 || span_w < 0) {
        throw GeometryError("conv2d: kernel " + dims_to_string(kernel) + " larger than padded input " +
                            dims_to_string(input));
    }
    if (span_h % stride != 0 || span_w % stride != 0) {
        throw GeometryError("conv2d: output size is not integral for input " + dims_to_string(input) + ", kernel " +
                            dims_to_string(kernel) + ", stride " + std::to_string(stride) + ", pad " +
                            std::to_string(pad));
    }
    g.out_h = span_h / stride + 1;
    g.out_w = span_w / stride + 1;
    return g;
}

template <class Real>
void im2col(const Real* image, const ConvGeometry& g, Real* cols) {
    const auto cin = g.in_channels;
    const auto span = g.kernel_w * cin;  // one kernel row of a patch, contiguous in NHWC
    const auto row_len = g.kernel_h * span;
    for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
        for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            Real* row = cols + (oh * g.out_w + ow) * row_len;
            const auto iw0 = ow * g.stride - g.pad;
            const bool inside_w = iw0 >= 0 && iw0 + g.kernel_w <= g.width;
            for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
                const auto ih = oh * g.stride - g.pad + kh;
                Real* dst = row + kh * span;
                if (ih < 0 || ih >= g.height) {
                    std::fill(dst, dst + span, Real(0));
                    continue;
                }
                const Real* src = image + (ih * g.width + iw0) * cin;
                if (inside_w) {
                    std::copy(src, src + span, dst);
                    continue;
                }
                for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
                    const auto iw = iw0 + kw;
                    if (iw < 0 || iw >= g.width) {
                        std::fill(dst + kw * cin, dst + (kw + 1) * cin, Real(0));
                    } else {
                        std::copy(src + kw * cin, src + (kw + 1) * cin, dst + kw * cin);
                    }
                }
            }
        }
    }
}

template <class Real>
void col2im_add(const Real* cols, const ConvGeometry& g, Real* image) {
    const auto cin = g.in_channels;
    const auto span = g.kernel_w * cin;
    const auto row_len = g.kernel_h * span;
    for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
        for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const Real* row = cols + (oh * g.out_w + ow) * row_len;
            const auto iw0 = ow * g.stride - g.pad;
            const auto kw_lo = std::max<std::int64_t>(0, -iw0);
            const auto kw_hi = std::min<std::int64_t>(g.kernel_w, g.width - iw0);
            if (kw_lo >= kw_hi) continue;
            for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
                const auto ih = oh * g.stride - g.pad + kh;
                if (ih < 0 || ih >= g.height) continue;
                const Real* src = row + kh * span + kw_lo * cin;
                Real* dst = image + (ih * g.width + iw0 + kw_lo) * cin;
                const auto n = (kw_hi - kw_lo) * cin;
                for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
            }
        }
    }
}

namespace {

// Per-thread im2col buffer; grows, never shrinks, never zero-filled on reuse.
template <class Real>
std::vector<Real>& conv_scratch(std::size_t n) {
    thread_local std::vector<Real> buffer;
    if (buffer.size() < n) buffer.resize(n);
    return buffer;
}

}  // namespace

template <class Real>
BasicTensor<Real> conv2d(const BasicTensor<Real>& input, const BasicTensor<Real>& kernel, std::int64_t stride,
                         std::int64_t pad) {
    require_defined(input.defined() && kernel.defined(), "conv2d");
    const auto g = conv_geometry(input.dims(), kernel.dims(), stride, pad);
    const auto rows = g.out_h * g.out_w;
    const auto depth = g.kernel_h * g.kernel_w * g.in_channels;
    const auto in_stride = g.height * g.width * g.in_channels;
    const auto out_stride = rows * g.out_channels;
    // A 1x1 unit-stride unpadded conv reads the image as its own patch matrix.
    const bool pointwise = g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.pad == 0;

    BasicTensor<Real> out(Dims{g.batch, g.out_h, g.out_w, g.out_channels});
    {
        const Real* in = input.data().data();
        Real* o = out.mutable_data().data();
        ConstMatrixMap<Real> kmat(kernel.data().data(), depth, g.out_channels);
        parallel_for(g.batch, [&](std::int64_t n) {
            const Real* cols = in + n * in_stride;
            if (!pointwise) {
                auto& scratch = conv_scratch<Real>(static_cast<std::size_t>(rows * depth));
                im2col(in + n * in_stride, g, scratch.data());
                cols = scratch.data();
            }
            MatrixMap<Real> dst(o + n * out_stride, rows, g.out_channels);
            dst.noalias() = ConstMatrixMap<Real>(cols, rows, depth) * kmat;
        });
    }

    if (auto* tape = recording_tape({&input, &kernel})) {
        tape->record("conv2d", {input, kernel}, out,
                     [input, kernel, g, rows, depth, in_stride, out_stride, pointwise](std::span<const Real> gout) mutable {
                         ConstMatrixMap<Real> kmat(kernel.data().data(), depth, g.out_channels);
                         const Real* in = input.data().data();
                         const bool want_input = input.requires_grad();
                         const bool want_kernel = kernel.requires_grad();
                         Real* dx = want_input ? input.grad_buffer().data() : nullptr;
                         std::vector<std::vector<Real>> partial(want_kernel ? static_cast<std::size_t>(g.batch) : 0);
                         parallel_for(g.batch, [&](std::int64_t n) {
                             ConstMatrixMap<Real> go(gout.data() + n * out_stride, rows, g.out_channels);
                             auto& scratch = conv_scratch<Real>(pointwise ? 0 : static_cast<std::size_t>(rows * depth));
                             const Real* cols = in + n * in_stride;
                             if (want_kernel) {
                                 if (!pointwise) {
                                     im2col(in + n * in_stride, g, scratch.data());
                                     cols = scratch.data();
                                 }
                                 auto& pk = partial[static_cast<std::size_t>(n)];
                                 pk.resize(static_cast<std::size_t>(depth * g.out_channels));
                                 MatrixMap<Real>(pk.data(), depth, g.out_channels).noalias() =
                                     ConstMatrixMap<Real>(cols, rows, depth).transpose() * go;
                             }
                             if (want_input) {
                                 if (pointwise) {
                                     MatrixMap<Real>(dx + n * in_stride, rows, depth).noalias() += go * kmat.transpose();
                                 } else {
                                     MatrixMap<Real>(scratch.data(), rows, depth).noalias() = go * kmat.transpose();
                                     col2im_add(scratch.data(), g, dx + n * in_stride);
                                 }
                             }
                         });
                         if (want_kernel) {
                             auto dk = kernel.grad_buffer();
                             for (const auto& pk : partial) {
                                 for (std::size_t i = 0; i < pk.size(); ++i) dk[i] += pk[i];
                             }
                         }
                     });
    }
    return out;
}

template <class Real>
BasicTensor<Real> add(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
    require_defined(a.defined() && b.defined(), "add");
    require_same_dims(a.dims(), b.dims(), "add");
    BasicTensor<Real> out(a.dims());
    auto o = out.mutable_data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
    if (auto* tape = recording_tape({&a, &b})) {
        tape->record("add", {a, b}, out, [a, b](std::span<const Real> g) mutable {
            for (auto* t : {&a, &b}) {
                if (!t->requires_grad()) continue;
                auto d = t->grad_buffer();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
            }
        });
    }
    return out;
}

template <class Real>
BasicTensor<Real> sub(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
    require_defined(a.defined() && b.defined(), "sub");
    require_same_dims(a.dims(), b.dims(), "sub");
    BasicTensor<Real> out(a.dims());
    auto o = out.mutable_data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
    if (auto* tape = recording_tape({&a, &b})) {
        tape->record("sub", {a, b}, out, [a, b](std::span<const Real> g) mutable {
            if (a.requires_grad()) {
                auto d = a.grad_buffer();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
            }
            if (b.requires_grad()) {
                auto d = b.grad_buffer();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
            }
        });
    }
    return out;
}

template <class Real>
BasicTensor<Real> scalar_mul(const BasicTensor<Real>& a, double c) {
    require_defined(a.defined(), "scalar_mul");
    const auto s = static_cast<Real>(c);
    BasicTensor<Real> out(a.dims());
    auto o = out.mutable_data();
    auto x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = s * x[i];
    if (auto* tape = recording_tape({&a})) {
        tape->record("scalar_mul", {a}, out, [a, s](std::span<const Real> g) mutable {
            auto d = a.grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * g[i];
        });
    }
    return out;
}

template <class Real>
BasicTensor<Real> scale_by(const BasicTensor<Real>& a, const BasicTensor<Real>& s) {
    require_defined(a.defined() && s.defined(), "scale_by");
    if (s.numel() != 1) throw ShapeError("scale_by: scale must hold one element, got " + dims_to_string(s.dims()));
    const Real w = s.item();
    BasicTensor<Real> out(a.dims());
    auto o = out.mutable_data();
    auto x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = w * x[i];
    if (auto* tape = recording_tape({&a, &s})) {
        tape->record("scale_by", {a, s}, out, [a, s, w](std::span<const Real> g) mutable {
            if (a.requires_grad()) {
                auto d = a.grad_buffer();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += w * g[i];
            }
            if (s.requires_grad()) {
                double acc = 0;
                auto x = a.data();
                for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(g[i]) * x[i];
                s.grad_buffer()[0] += static_cast<Real>(acc);
            }
        });
    }
    return out;
}

template <class Real>
BasicTensor<Real> relu(const BasicTensor<Real>& a) {
    require_defined(a.defined(), "relu");
    BasicTensor<Real> out(a.dims());
    auto o = out.mutable_data();
    auto x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > Real(0) ? x[i] : Real(0);
    if (auto* m = KinkMonitor::active()) {
        for (auto v : x) m->add(v > Real(0));
    }
    if (auto* tape = recording_tape({&a})) {
        tape->record("relu", {a}, out, [a](std::span<const Real> g) mutable {
            auto d = a.grad_buffer();
            auto x = a.data();
            for (std::size_t i = 0; i < d.size(); ++i) {
                if (x[i] > Real(0)) d[i] += g[i];
            }
        });
    }
    return out;
}

template <class Real>
BasicTensor<Real> clamp(const BasicTensor<Real>& a, double lo, double hi) {
    require_defined(a.defined(), "clamp");
    const auto l = static_cast<Real>(lo);
    const auto h = static_cast<Real>(hi);
    BasicTensor<Real> out(a.dims());
    auto o = out.mutable_data();
    auto x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp(x[i], l, h);
    if (auto* m = KinkMonitor::active()) {
        for (auto v : x) m->add((v > l ? 1u : 0u) + (v < h ? 2u : 0u));
    }
    if (auto* tape = recording_tape({&a})) {
        tape->record("clamp", {a}, out, [a, l, h](std::span<const Real> g) mutable {
            auto d = a.grad_buffer();
            auto x = a.data();
            for (std::size_t i = 0; i < d.size(); ++i) {
                if (x[i] > l && x[i] < h) d[i] += g[i];
            }
        });
    }
    return out;
}

template <class Real>
BasicTensor<Real> add_channel_bias(const BasicTensor<Real>& x, const BasicTensor<Real>& bias) {
    require_defined(x.defined() && bias.defined(), "add_channel_bias");
    const auto c = x.dim(-1);
    if (bias.rank() != 1 || bias.dim(0) != c) {
        throw ShapeError("add_channel_bias: bias " + dims_to_string(bias.dims()) + " for input " +
                         dims_to_string(x.dims()));
    }
    BasicTensor<Real> out(x.dims());
    auto o = out.mutable_data();
    auto v = x.data();
    auto b = bias.data();
    const auto rows = static_cast<std::size_t>(x.numel() / c);
    const auto cc = static_cast<std::size_t>(c);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < cc; ++k) o[r * cc + k] = v[r * cc + k] + b[k];
    }
    if (auto* tape = recording_tape({&x, &bias})) {
        tape->record("add_channel_bias", {x, bias}, out, [x, bias, rows, cc](std::span<const Real> g) mutable {
            if (x.requires_grad()) {
                auto d = x.grad_buffer();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
            }
            if (bias.requires_grad()) {
                std::vector<double> acc(cc, 0.0);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t k = 0; k < cc; ++k) acc[k] += g[r * cc + k];
                }
                auto d = bias.grad_buffer();
                for (std::size_t k = 0; k < cc; ++k) d[k] += static_cast<Real>(acc[k]);
            }
        });
    }
    return out;
}

template <class Real>
BasicTensor<Real> broadcast_to(const BasicTensor<Real>& t, const Dims& dims) {
    require_defined(t.defined(), "broadcast_to");
    const auto& src = t.dims();
    if (src.size() != dims.size()) {
        throw ShapeError("broadcast_to: rank mismatch " + dims_to_string(src) + " -> " + dims_to_string(dims));
    }
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (src[i] != dims[i] && src[i] != 1) {
            throw ShapeError("broadcast_to: cannot broadcast " + dims_to_string(src) + " to " + dims_to_string(dims));
        }
    }
    BasicTensor<Real> out(dims);
    const auto n = static_cast<std::size_t>(out.numel());
    // Source offset for every output element.
    std::vector<std::size_t> source(n);
    {
        const auto r = dims.size();
        std::vector<std::int64_t> src_stride(r, 0);
        std::int64_t s = 1;
        for (std::size_t i = r; i-- > 0;) {
            src_stride[i] = src[i] == 1 ? 0 : s;
            s *= src[i];
        }
        std::vector<std::int64_t> idx(r, 0);
        for (std::size_t flat = 0; flat < n; ++flat) {
            std::int64_t off = 0;
            for (std::size_t i = 0; i < r; ++i) off += idx[i] * src_stride[i];
            source[flat] = static_cast<std::size_t>(off);
            for (std::size_t i = r; i-- > 0;) {
                if (++idx[i] < dims[i]) break;
                idx[i] = 0;
            }
        }
    }
    auto o = out.mutable_data();
    auto x = t.data();
    for (std::size_t i = 0; i < n; ++i) o[i] = x[source[i]];
    if (auto* tape = recording_tape({&t})) {
        tape->record("broadcast_to", {t}, out, [t, source = std::move(source)](std::span<const Real> g) mutable {
            std::vector<double> acc(static_cast<std::size_t>(t.numel()), 0.0);
            for (std::size_t i = 0; i < source.size(); ++i) acc[source[i]] += g[i];
            auto d = t.grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += static_cast<Real>(acc[i]);
        });
    }
    return out;
}

template <class Real>
BasicTensor<Real> reshape(const BasicTensor<Real>& t, const Dims& dims) {
    require_defined(t.defined(), "reshape");
    if (numel_of(dims) != t.numel()) {
        throw ShapeError("reshape: " + dims_to_string(t.dims()) + " -> " + dims_to_string(dims));
    }
    BasicTensor<Real> out(dims, std::vector<Real>(t.data().begin(), t.data().end()));
    if (auto* tape = recording_tape({&t})) {
        tape->record("reshape", {t}, out, [t](std::span<const Real> g) mutable {
            auto d = t.grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        });
    }
    return out;
}

namespace {

struct AxisSplit {
    std::int64_t outer = 1, reduced = 1, inner = 1;
};

AxisSplit split_axes(const Dims& dims, int first, int last, const char* op) {
    const int r = static_cast<int>(dims.size());
    if (first < 0 || last >= r || first > last) {
        throw ShapeError(std::string(op) + ": bad axis range [" + std::to_string(first) + ", " +
                         std::to_string(last) + "] for " + dims_to_string(dims));
    }
    AxisSplit s;
    for (int i = 0; i < first; ++i) s.outer *= dims[static_cast<std::size_t>(i)];
    for (int i = first; i <= last; ++i) s.reduced *= dims[static_cast<std::size_t>(i)];
    for (int i = last + 1; i < r; ++i) s.inner *= dims[static_cast<std::size_t>(i)];
    return s;
}

template <class Real>
std::vector<double> axis_means(std::span<const Real> x, const AxisSplit& s) {
    std::vector<double> mean(static_cast<std::size_t>(s.outer * s.inner), 0.0);
    for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t r = 0; r < s.reduced; ++r) {
            const auto base = (o * s.reduced + r) * s.inner;
            for (std::int64_t i = 0; i < s.inner; ++i) mean[static_cast<std::size_t>(o * s.inner + i)] += x[base + i];
        }
    }
    for (auto& m : mean) m /= static_cast<double>(s.reduced);
    return mean;
}

}  // namespace

template <class Real>
BasicTensor<Real> mean_over_axes(const BasicTensor<Real>& t, int first, int last) {
    require_defined(t.defined(), "mean_over_axes");
    const auto s = split_axes(t.dims(), first, last, "mean_over_axes");
    Dims out_dims = t.dims();
    for (int i = first; i <= last; ++i) out_dims[static_cast<std::size_t>(i)] = 1;
    const auto mean = axis_means(t.data(), s);
    BasicTensor<Real> out(out_dims);
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<Real>(mean[i]);
    if (auto* tape = recording_tape({&t})) {
        tape->record("mean_over_axes", {t}, out, [t, s](std::span<const Real> g) mutable {
            auto d = t.grad_buffer();
            const auto inv = Real(1) / static_cast<Real>(s.reduced);
            for (std::int64_t o = 0; o < s.outer; ++o) {
                for (std::int64_t r = 0; r < s.reduced; ++r) {
                    const auto base = (o * s.reduced + r) * s.inner;
                    for (std::int64_t i = 0; i < s.inner; ++i) d[base + i] += g[o * s.inner + i] * inv;
                }
            }
        });
    }
    return out;
}

template <class Real>
BasicTensor<Real> center_over_axes(const BasicTensor<Real>& t, int first, int last) {
    require_defined(t.defined(), "center_over_axes");
    const auto s = split_axes(t.dims(), first, last, "center_over_axes");
    const auto mean = axis_means(t.data(), s);
    BasicTensor<Real> out(t.dims());
    auto o = out.mutable_data();
    auto x = t.data();
    for (std::int64_t a = 0; a < s.outer; ++a) {
        for (std::int64_t r = 0; r < s.reduced; ++r) {
            const auto base = (a * s.reduced + r) * s.inner;
            for (std::int64_t i = 0; i < s.inner; ++i) {
                o[base + i] = static_cast<Real>(x[base + i] - mean[static_cast<std::size_t>(a * s.inner + i)]);
            }
        }
    }
    if (auto* tape = recording_tape({&t})) {
        tape->record("center_over_axes", {t}, out, [t, s](std::span<const Real> g) mutable {
            const auto gmean = axis_means(g, s);
            auto d = t.grad_buffer();
            for (std::int64_t a = 0; a < s.outer; ++a) {
                for (std::int64_t r = 0; r < s.reduced; ++r) {
                    const auto base = (a * s.reduced + r) * s.inner;
                    for (std::int64_t i = 0; i < s.inner; ++i) {
                        d[base + i] += static_cast<Real>(g[base + i] - gmean[static_cast<std::size_t>(a * s.inner + i)]);
                    }
                }
            }
        });
    }
    return out;
}

template <class Real>
BasicTensor<Real> channel_mean(const BasicTensor<Real>& t) {
    if (!t.defined() || t.rank() < 2) {
        throw ShapeError("channel_mean: need at least one spatial axis, got " + dims_to_string(t.dims()));
    }
    return mean_over_axes(t, 0, t.rank() - 2);
}

template <class Real>
BasicTensor<Real> concat_axis0(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
    require_defined(a.defined() && b.defined(), "concat_axis0");
    if (a.rank() != b.rank() || !std::equal(a.dims().begin() + 1, a.dims().end(), b.dims().begin() + 1)) {
        throw ShapeError("concat_axis0: " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
    }
    Dims dims = a.dims();
    dims[0] += b.dim(0);
    std::vector<Real> values;
    values.reserve(static_cast<std::size_t>(a.numel() + b.numel()));
    values.insert(values.end(), a.data().begin(), a.data().end());
    values.insert(values.end(), b.data().begin(), b.data().end());
    BasicTensor<Real> out(dims, std::move(values));
    if (auto* tape = recording_tape({&a, &b})) {
        tape->record("concat_axis0", {a, b}, out, [a, b](std::span<const Real> g) mutable {
            const auto na = static_cast<std::size_t>(a.numel());
            if (a.requires_grad()) {
                auto d = a.grad_buffer();
                for (std::size_t i = 0; i < na; ++i) d[i] += g[i];
            }
            if (b.requires_grad()) {
                auto d = b.grad_buffer();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[na + i];
            }
        });
    }
    return out;
}

template <class Real>
std::pair<BasicTensor<Real>, BasicTensor<Real>> split_axis0(const BasicTensor<Real>& t, std::int64_t n) {
    require_defined(t.defined(), "split_axis0");
    if (n <= 0 || n >= t.dim(0)) {
        throw ShapeError("split_axis0: split point " + std::to_string(n) + " outside (0, " +
                         std::to_string(t.dim(0)) + ")");
    }
    const auto row = t.numel() / t.dim(0);
    Dims da = t.dims();
    Dims db = t.dims();
    da[0] = n;
    db[0] = t.dim(0) - n;
    auto x = t.data();
    const auto cut = static_cast<std::size_t>(n * row);
    BasicTensor<Real> a(da, std::vector<Real>(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(cut)));
    BasicTensor<Real> b(db, std::vector<Real>(x.begin() + static_cast<std::ptrdiff_t>(cut), x.end()));
    if (auto* tape = recording_tape({&t})) {
        tape->record("split_axis0.head", {t}, a, [t](std::span<const Real> g) mutable {
            auto d = t.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        });
        tape->record("split_axis0.tail", {t}, b, [t, cut](std::span<const Real> g) mutable {
            auto d = t.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) d[cut + i] += g[i];
        });
    }
    return {a, b};
}

template <class Real>
BasicTensor<Real> upsample_nearest_2x(const BasicTensor<Real>& x) {
    require_defined(x.defined(), "upsample_nearest_2x");
    require_rank(x.dims(), 4, "upsample_nearest_2x");
    const auto n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    BasicTensor<Real> out(Dims{n, 2 * h, 2 * w, c});
    auto o = out.mutable_data();
    auto v = x.data();
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t i = 0; i < 2 * h; ++i) {
            for (std::int64_t j = 0; j < 2 * w; ++j) {
                const auto src = ((b * h + i / 2) * w + j / 2) * c;
                const auto dst = ((b * 2 * h + i) * 2 * w + j) * c;
                std::copy_n(v.begin() + src, c, o.begin() + dst);
            }
        }
    }
    if (auto* tape = recording_tape({&x})) {
        tape->record("upsample_nearest_2x", {x}, out, [x, n, h, w, c](std::span<const Real> g) mutable {
            auto d = x.grad_buffer();
            for (std::int64_t b = 0; b < n; ++b) {
                for (std::int64_t i = 0; i < h; ++i) {
                    for (std::int64_t j = 0; j < w; ++j) {
                        const auto dst = ((b * h + i) * w + j) * c;
                        for (std::int64_t k = 0; k < c; ++k) {
                            Real acc = 0;
                            for (int di = 0; di < 2; ++di) {
                                for (int dj = 0; dj < 2; ++dj) {
                                    acc += g[((b * 2 * h + 2 * i + di) * 2 * w + 2 * j + dj) * c + k];
                                }
                            }
                            d[dst + k] += acc;
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <class Real>
BasicTensor<Real> avgpool_2x(const BasicTensor<Real>& x) {
    require_defined(x.defined(), "avgpool_2x");
    require_rank(x.dims(), 4, "avgpool_2x");
    const auto n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw GeometryError("avgpool_2x: spatial dims must be even, got " + dims_to_string(x.dims()));
    }
    const auto oh = h / 2, ow = w / 2;
    BasicTensor<Real> out(Dims{n, oh, ow, c});
    auto o = out.mutable_data();
    auto v = x.data();
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t i = 0; i < oh; ++i) {
            for (std::int64_t j = 0; j < ow; ++j) {
                for (std::int64_t k = 0; k < c; ++k) {
                    const Real s = v[((b * h + 2 * i) * w + 2 * j) * c + k] + v[((b * h + 2 * i) * w + 2 * j + 1) * c + k] +
                                   v[((b * h + 2 * i + 1) * w + 2 * j) * c + k] +
                                   v[((b * h + 2 * i + 1) * w + 2 * j + 1) * c + k];
                    o[((b * oh + i) * ow + j) * c + k] = s * Real(0.25);
                }
            }
        }
    }
    if (auto* tape = recording_tape({&x})) {
        tape->record("avgpool_2x", {x}, out, [x, n, h, w, c](std::span<const Real> g) mutable {
            auto d = x.grad_buffer();
            const auto oh = h / 2, ow = w / 2;
            for (std::int64_t b = 0; b < n; ++b) {
                for (std::int64_t i = 0; i < h; ++i) {
                    for (std::int64_t j = 0; j < w; ++j) {
                        const auto src = ((b * oh + i / 2) * ow + j / 2) * c;
                        const auto dst = ((b * h + i) * w + j) * c;
                        for (std::int64_t k = 0; k < c; ++k) d[dst + k] += g[src + k] * Real(0.25);
                    }
                }
            }
        });
    }
    return out;
}

template <class Real>
BasicTensor<Real> l1_reduce(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
    require_defined(a.defined() && b.defined(), "l1_reduce");
    require_same_dims(a.dims(), b.dims(), "l1_reduce");
    auto x = a.data();
    auto y = b.data();
    double acc = 0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(static_cast<double>(x[i]) - y[i]);
    if (auto* m = KinkMonitor::active()) {
        for (std::size_t i = 0; i < x.size(); ++i) m->add(x[i] > y[i]);
    }
    const auto n = static_cast<double>(x.size());
    auto out = scalar_result<Real>(acc / n);
    if (auto* tape = recording_tape({&a, &b})) {
        tape->record("l1_reduce", {a, b}, out, [a, b, n](std::span<const Real> g) mutable {
            const auto scale = static_cast<Real>(g[0] / n);
            auto x = a.data();
            auto y = b.data();
            auto sign = [](Real v) { return v > Real(0) ? Real(1) : (v < Real(0) ? Real(-1) : Real(0)); };
            if (a.requires_grad()) {
                auto d = a.grad_buffer();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * sign(x[i] - y[i]);
            }
            if (b.requires_grad()) {
                auto d = b.grad_buffer();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] -= scale * sign(x[i] - y[i]);
            }
        });
    }
    return out;
}

template <class Real>
BasicTensor<Real> mse_reduce(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
    require_defined(a.defined() && b.defined(), "mse_reduce");
    require_same_dims(a.dims(), b.dims(), "mse_reduce");
    auto x = a.data();
    auto y = b.data();
    double acc = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = static_cast<double>(x[i]) - y[i];
        acc += r * r;
    }
    const auto n = static_cast<double>(x.size());
    auto out = scalar_result<Real>(acc / n);
    if (auto* tape = recording_tape({&a, &b})) {
        tape->record("mse_reduce", {a, b}, out, [a, b, n](std::span<const Real> g) mutable {
            const auto scale = static_cast<Real>(2.0 * g[0] / n);
            auto x = a.data();
            auto y = b.data();
            if (a.requires_grad()) {
                auto d = a.grad_buffer();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * (x[i] - y[i]);
            }
            if (b.requires_grad()) {
                auto d = b.grad_buffer();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] -= scale * (x[i] - y[i]);
            }
        });
    }
    return out;
}

template <class Real>
BasicTensor<Real> sum_squares(const BasicTensor<Real>& a) {
    require_defined(a.defined(), "sum_squares");
    double acc = 0;
    for (auto v : a.data()) acc += static_cast<double>(v) * v;
    auto out = scalar_result<Real>(acc);
    if (auto* tape = recording_tape({&a})) {
        tape->record("sum_squares", {a}, out, [a](std::span<const Real> g) mutable {
            auto d = a.grad_buffer();
            auto x = a.data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += Real(2) * g[0] * x[i];
        });
    }
    return out;
}

namespace {

// Horizontal-derivative Sobel taps indexed [dy][dx]; the vertical one is its transpose.
constexpr int kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};

}  // namespace

template <class Real>
BasicTensor<Real> sobel_gradients(const BasicTensor<Real>& x) {
    require_defined(x.defined(), "sobel_gradients");
    require_rank(x.dims(), 4, "sobel_gradients");
    const auto n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (h < 3 || w < 3) throw GeometryError("sobel_gradients: need at least 3x3, got " + dims_to_string(x.dims()));
    const auto oh = h - 2, ow = w - 2;
    BasicTensor<Real> out(Dims{n, oh, ow, 2 * c});
    auto o = out.mutable_data();
    auto v = x.data();
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t i = 0; i < oh; ++i) {
            for (std::int64_t j = 0; j < ow; ++j) {
                for (std::int64_t k = 0; k < c; ++k) {
                    Real gx = 0, gy = 0;
                    for (int dy = 0; dy < 3; ++dy) {
                        for (int dx = 0; dx < 3; ++dx) {
                            const Real p = v[((b * h + i + dy) * w + j + dx) * c + k];
                            gx += static_cast<Real>(kSobelX[dy][dx]) * p;
                            gy += static_cast<Real>(kSobelX[dx][dy]) * p;
                        }
                    }
                    const auto base = ((b * oh + i) * ow + j) * 2 * c;
                    o[base + 2 * k] = gx;
                    o[base + 2 * k + 1] = gy;
                }
            }
        }
    }
    if (auto* tape = recording_tape({&x})) {
        tape->record("sobel_gradients", {x}, out, [x, n, h, w, c](std::span<const Real> g) mutable {
            auto d = x.grad_buffer();
            const auto oh = h - 2, ow = w - 2;
            for (std::int64_t b = 0; b < n; ++b) {
                for (std::int64_t i = 0; i < oh; ++i) {
                    for (std::int64_t j = 0; j < ow; ++j) {
                        for (std::int64_t k = 0; k < c; ++k) {
                            const auto base = ((b * oh + i) * ow + j) * 2 * c;
                            const Real gx = g[base + 2 * k];
                            const Real gy = g[base + 2 * k + 1];
                            for (int dy = 0; dy < 3; ++dy) {
                                for (int dx = 0; dx < 3; ++dx) {
                                    d[((b * h + i + dy) * w + j + dx) * c + k] +=
                                        static_cast<Real>(kSobelX[dy][dx]) * gx + static_cast<Real>(kSobelX[dx][dy]) * gy;
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

#define SHAPEMOIRE_INSTANTIATE_OPS(Real)                                                                        \
    template void im2col(const Real*, const ConvGeometry&, Real*);                                             \
    template void col2im_add(const Real*, const ConvGeometry&, Real*);                                         \
    template BasicTensor<Real> conv2d(const BasicTensor<Real>&, const BasicTensor<Real>&, std::int64_t,        \
                                      std::int64_t);                                                           \
    template BasicTensor<Real> add(const BasicTensor<Real>&, const BasicTensor<Real>&);                        \
    template BasicTensor<Real> sub(const BasicTensor<Real>&, const BasicTensor<Real>&);                        \
    template BasicTensor<Real> scalar_mul(const BasicTensor<Real>&, double);                                   \
    template BasicTensor<Real> scale_by(const BasicTensor<Real>&, const BasicTensor<Real>&);                   \
    template BasicTensor<Real> relu(const BasicTensor<Real>&);                                                 \
    template BasicTensor<Real> clamp(const BasicTensor<Real>&, double, double);                                \
    template BasicTensor<Real> add_channel_bias(const BasicTensor<Real>&, const BasicTensor<Real>&);           \
    template BasicTensor<Real> broadcast_to(const BasicTensor<Real>&, const Dims&);                            \
    template BasicTensor<Real> reshape(const BasicTensor<Real>&, const Dims&);                                 \
    template BasicTensor<Real> mean_over_axes(const BasicTensor<Real>&, int, int);                             \
    template BasicTensor<Real> center_over_axes(const BasicTensor<Real>&, int, int);                           \
    template BasicTensor<Real> channel_mean(const BasicTensor<Real>&);                                         \
    template BasicTensor<Real> concat_axis0(const BasicTensor<Real>&, const BasicTensor<Real>&);               \
    template std::pair<BasicTensor<Real>, BasicTensor<Real>> split_axis0(const BasicTensor<Real>&, std::int64_t); \
    template BasicTensor<Real> upsample_nearest_2x(const BasicTensor<Real>&);                                  \
    template BasicTensor<Real> avgpool_2x(const BasicTensor<Real>&);                                           \
    template BasicTensor<Real> l1_reduce(const BasicTensor<Real>&, const BasicTensor<Real>&);                  \
    template BasicTensor<Real> mse_reduce(const BasicTensor<Real>&, const BasicTensor<Real>&);                 \
    template BasicTensor<Real> sum_squares(const BasicTensor<Real>&);                                          \
    template BasicTensor<Real> sobel_gradients(const BasicTensor<Real>&);

SHAPEMOIRE_INSTANTIATE_OPS(float)
SHAPEMOIRE_INSTANTIATE_OPS(double)

}  // namespace shapemoire
