#include "shapemoire/properties.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "shapemoire/grad_check.hpp"
#include "shapemoire/metrics.hpp"
#include "shapemoire/network.hpp"
#include "shapemoire/ops.hpp"
#include "shapemoire/random.hpp"
#include "shapemoire/shape_stream.hpp"
#include "shapemoire/shapeconv.hpp"

namespace shapemoire {

namespace {

using Clock = std::chrono::steady_clock;

class Timer {
public:
    double seconds() const { return std::chrono::duration<double>(Clock::now() - start_).count(); }

private:
    Clock::time_point start_ = Clock::now();
};

PropertyResult finish(std::string name, double measured, double threshold, bool passed, std::string detail,
                      const Timer& timer) {
    return {std::move(name), passed, measured, threshold, std::move(detail), timer.seconds()};
}

std::int64_t pick(Rng& rng, std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

// Input extent that tiles exactly for the given kernel/stride/pad.
std::int64_t fitting_extent(Rng& rng, std::int64_t k, std::int64_t stride, std::int64_t pad) {
    for (;;) {
        const auto out = pick(rng, 1, 6);
        const auto extent = (out - 1) * stride + k - 2 * pad;
        if (extent >= 1) return extent;
    }
}

template <class Real>
BasicShapeConvParams<Real> random_layer(Rng& rng, std::int64_t k, std::int64_t cin, std::int64_t cout,
                                        std::int64_t stride, std::int64_t pad) {
    BasicShapeConvParams<Real> p;
    p.kernel = random_uniform<Real>(Dims{k, k, cin, cout}, -1.0, 1.0, rng);
    p.w_base = random_uniform<Real>(Dims{1}, -2.0, 2.0, rng);
    p.w_shape = random_uniform<Real>(Dims{k * k, k, k, cin}, -1.0, 1.0, rng);
    p.stride = stride;
    p.pad = pad;
    return p;
}

// Images with a random per-channel offset, so the base path carries signal.
template <class Real>
BasicTensor<Real> random_images(Rng& rng, const Dims& dims) {
    auto t = random_uniform<Real>(dims, -1.0, 1.0, rng);
    const auto c = dims.back();
    std::vector<double> offset(static_cast<std::size_t>(c));
    for (auto& o : offset) o = rng.uniform(-2.0, 2.0);
    auto d = t.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += static_cast<Real>(offset[i % static_cast<std::size_t>(c)]);
    return t;
}

template <class Real>
void randomize_shape_weights(BasicDemoireNet<Real>& net, Rng& rng, double spread) {
    for (auto& layer : net.layers()) {
        if (!layer.shape_weights) continue;
        auto wb = layer.params.w_base.mutable_data();
        wb[0] = static_cast<Real>(rng.uniform(0.5, 1.5));
        for (auto& v : layer.params.w_shape.mutable_data()) v += static_cast<Real>(rng.uniform(-spread, spread));
        for (auto& v : layer.bias.mutable_data()) v = static_cast<Real>(rng.uniform(-0.1, 0.1));
    }
}

NetConfig small_net(LayerKind kind, std::uint64_t seed) {
    NetConfig c;
    c.widths = {4, 6, 8};
    c.blocks_per_scale = 1;
    c.layer_kind = kind;
    c.seed = seed;
    return c;
}

}  // namespace

PropertyResult check_formulation_equivalence(int configs, std::uint64_t seed, double tol) {
    Timer timer;
    Rng rng(seed);
    double worst = 0;
    std::string worst_desc;
    for (int i = 0; i < configs; ++i) {
        const auto k = pick(rng, 1, 5);
        const auto cin = pick(rng, 1, 8), cout = pick(rng, 1, 8);
        const auto stride = pick(rng, 1, 2), pad = pick(rng, 0, 2);
        const auto h = fitting_extent(rng, k, stride, pad);
        const auto w = fitting_extent(rng, k, stride, pad);
        const auto params = random_layer<float>(rng, k, cin, cout, stride, pad);
        const auto x = random_images<float>(rng, Dims{pick(rng, 1, 2), h, w, cin});
        const double err = max_rel_error(forward_patch(params, x), forward_kernel(params, x));
        if (err >= worst) {
            worst = err;
            char buf[160];
            std::snprintf(buf, sizeof buf, "worst: k=%lld cin=%lld cout=%lld stride=%lld pad=%lld input=%s",
                          static_cast<long long>(k), static_cast<long long>(cin), static_cast<long long>(cout),
                          static_cast<long long>(stride), static_cast<long long>(pad), dims_to_string(x.dims()).c_str());
            worst_desc = buf;
        }
    }
    return finish("formulation equivalence (" + std::to_string(configs) + " configs)", worst, tol, worst <= tol,
                  worst_desc, timer);
}

PropertyResult check_layer_fusion(int configs, int probes, std::uint64_t seed, double tol) {
    Timer timer;
    Rng rng(seed);
    double worst = 0;
    for (int i = 0; i < configs; ++i) {
        const auto k = pick(rng, 1, 5);
        const auto stride = pick(rng, 1, 2), pad = pick(rng, 0, 2);
        const auto params = random_layer<float>(rng, k, pick(rng, 1, 8), pick(rng, 1, 8), stride, pad);
        const auto fused = fuse(params);
        const auto h = fitting_extent(rng, k, stride, pad), w = fitting_extent(rng, k, stride, pad);
        for (int j = 0; j < probes; ++j) {
            const auto x = random_images<float>(rng, Dims{1, h, w, params.in_channels()});
            worst = std::max(worst, max_rel_error(conv2d(x, fused.kernel, fused.stride, fused.pad),
                                                  forward_kernel(params, x)));
        }
    }
    return finish("layer fusion", worst, tol, worst <= tol,
                  std::to_string(configs) + " layers x " + std::to_string(probes) + " probes", timer);
}

PropertyResult check_network_fusion(int probes, std::uint64_t seed, double tol) {
    Timer timer;
    Rng rng(seed);
    auto net = DemoireNet::build(small_net(LayerKind::shapeconv, seed));
    randomize_shape_weights(net, rng, 0.3);
    const auto fused = net.fuse_model();
    double worst = 0;
    for (int i = 0; i < probes; ++i) {
        const auto x = random_uniform<float>(Dims{1, 16, 16, 3}, 0.0, 1.0, rng);
        worst = std::max(worst, max_rel_error(fused.forward(x), net.forward(x)));
    }
    const auto vanilla = DemoireNet::build(small_net(LayerKind::vanilla, seed));
    const bool counts_match = fused.parameter_count() == vanilla.parameter_count();
    bool stale = false;
    for (const auto& t : fused.state()) {
        if (t.name.ends_with(".W_B") || t.name.ends_with(".W_S")) stale = true;
    }
    std::string detail = "params fused=" + std::to_string(fused.parameter_count()) +
                         " vanilla=" + std::to_string(vanilla.parameter_count()) +
                         " unfused=" + std::to_string(net.parameter_count());
    if (stale) detail += "; fused state still holds W_B/W_S";
    return finish("network fusion (" + std::to_string(probes) + " probes)", worst, tol,
                  worst <= tol && counts_match && !stale, detail, timer);
}

PropertyResult check_identity_init(int probes, std::uint64_t seed) {
    Timer timer;
    Rng rng(seed);
    NetConfig config;
    config.seed = seed;
    config.layer_kind = LayerKind::shapeconv;
    const auto shape_net = DemoireNet::build(config);
    config.layer_kind = LayerKind::vanilla;
    const auto vanilla = DemoireNet::build(config);
    int mismatches = 0;
    double worst = 0;
    for (int i = 0; i < probes; ++i) {
        const auto x = random_uniform<float>(Dims{2, 32, 32, 3}, 0.0, 1.0, rng);
        const auto a = shape_net.forward(x);
        const auto b = vanilla.forward(x);
        if (!bitwise_equal(a, b)) ++mismatches;
        worst = std::max(worst, static_cast<double>(max_abs_diff(a, b)));
    }
    return finish("identity-init reduction (bitwise, " + std::to_string(probes) + " inputs)", worst, 0.0,
                  mismatches == 0, std::to_string(mismatches) + " non-identical outputs", timer);
}

namespace {

// Two ShapeConv layers with a global residual: x + L2(relu(L1(x))).
struct TwoLayerModel {
    std::vector<BasicConvLayer<double>> layers;

    TensorD forward(const TensorD& x) const {
        return add(x, layers[1].forward(layers[0].forward(x)));
    }
    std::vector<TensorD> parameters() const {
        std::vector<TensorD> p;
        for (const auto& l : layers) {
            p.insert(p.end(), {l.params.kernel, l.params.w_base, l.params.w_shape, l.bias});
        }
        return p;
    }
};

TwoLayerModel two_layer_model(Rng& rng) {
    TwoLayerModel m;
    const std::array<std::pair<std::int64_t, std::int64_t>, 2> io{{{3, 4}, {4, 3}}};
    for (std::size_t i = 0; i < io.size(); ++i) {
        BasicConvLayer<double> layer;
        layer.name = "l" + std::to_string(i);
        layer.shape_weights = true;
        layer.relu = i == 0;
        layer.params = random_layer<double>(rng, 3, io[i].first, io[i].second, 1, 1);
        layer.params.w_base.mutable_data()[0] = rng.uniform(0.5, 1.5);
        layer.params.w_shape = identity_shape_weights<double>(3, 3, io[i].first);
        for (auto& v : layer.params.w_shape.mutable_data()) v += rng.uniform(-0.3, 0.3);
        layer.bias = random_uniform<double>(Dims{io[i].second}, -0.1, 0.1, rng);
        m.layers.push_back(std::move(layer));
    }
    return m;
}

}  // namespace

PropertyResult check_gradients(int seeds, std::uint64_t seed, double tol) {
    Timer timer;
    double worst = 0;
    std::string where;
    std::int64_t checked = 0, one_sided = 0, unmeasurable = 0;
    auto note = [&](const GradCheckReport& r, const std::string& what) {
        checked += r.elements_checked;
        one_sided += r.one_sided;
        unmeasurable += r.unmeasurable;
        if (r.max_relative_error >= worst) {
            worst = r.max_relative_error;
            where = what + " param " + std::to_string(r.worst_param) + "[" + std::to_string(r.worst_element) + "]";
        }
    };
    for (int s = 0; s < seeds; ++s) {
        Rng rng(seed + static_cast<std::uint64_t>(s));
        // Single layer: K, W_B, W_S through forward_kernel and an L1 loss.
        auto p = random_layer<double>(rng, 3, 2, 3, 1, 1);
        const auto x = random_images<double>(rng, Dims{1, 5, 5, 2});
        const auto target = random_uniform<double>(Dims{1, 5, 5, 3}, -1.0, 1.0, rng);
        note(grad_check<double>([&] { return l1_loss(forward_kernel(p, x), target); },
                                {p.kernel, p.w_base, p.w_shape}, 1e-4),
             "layer seed " + std::to_string(s));

        // Two-layer model under the dual-stream loss, every parameter.
        auto model = two_layer_model(rng);
        const auto moire = random_uniform<double>(Dims{1, 8, 8, 3}, 0.0, 1.0, rng);
        const auto gt = random_uniform<double>(Dims{1, 8, 8, 3}, 0.0, 1.0, rng);
        note(grad_check<double>(
                 [&] {
                     return total_loss(model.forward(make_dual_batch(moire).combined), gt, kDefaultLambda).total;
                 },
                 model.parameters(), 1e-4),
             "two-layer seed " + std::to_string(s));
    }
    return finish("gradient check: ShapeConv layer + two-layer model (" + std::to_string(seeds) + " seeds)", worst,
                  tol, worst <= tol && unmeasurable == 0,
                  "worst at " + where + "; " + std::to_string(checked) + " elements, " + std::to_string(one_sided) +
                      " one-sided, " + std::to_string(unmeasurable) + " unmeasurable",
                  timer);
}

PropertyResult check_op_gradients(int seeds, std::uint64_t seed, double tol) {
    Timer timer;
    double worst = 0;
    std::string where;
    std::int64_t checked = 0, one_sided = 0, unmeasurable = 0;
    for (int s = 0; s < seeds; ++s) {
        Rng rng(seed + 1000 + static_cast<std::uint64_t>(s));
        auto a = random_uniform<double>(Dims{2, 4, 4, 3}, -1.0, 1.0, rng);
        auto b = random_uniform<double>(Dims{2, 4, 4, 3}, -1.0, 1.0, rng);
        auto c = random_uniform<double>(Dims{1}, 0.5, 1.5, rng);
        auto bias = random_uniform<double>(Dims{3}, -1.0, 1.0, rng);
        auto small = random_uniform<double>(Dims{2, 1, 1, 3}, -1.0, 1.0, rng);
        const auto k = pick(rng, 1, 3);
        const auto stride = pick(rng, 1, 2);
        const auto pad = pick(rng, 0, 1);
        const auto ext = fitting_extent(rng, k, stride, pad);
        auto img = random_uniform<double>(Dims{2, ext, ext, 2}, -1.0, 1.0, rng);
        auto kern = random_uniform<double>(Dims{k, k, 2, 3}, -1.0, 1.0, rng);
        auto t4 = random_uniform<double>(Dims{2, 4, 4, 3}, -1.0, 1.0, rng);
        auto t2 = random_uniform<double>(Dims{2, 2, 2, 3}, -1.0, 1.0, rng);
        auto t8 = random_uniform<double>(Dims{2, 8, 8, 3}, -1.0, 1.0, rng);
        auto sobel_t = random_uniform<double>(Dims{2, 6, 6, 6}, -1.0, 1.0, rng);
        auto conv_t = random_uniform<double>(conv2d(img, kern, stride, pad).dims(), -1.0, 1.0, rng);
        auto w3 = identity_shape_weights<double>(3, 3, 2);
        for (auto& v : w3.mutable_data()) v += rng.uniform(-0.5, 0.5);
        auto k3 = random_uniform<double>(Dims{3, 3, 2, 3}, -1.0, 1.0, rng);
        auto k3t = random_uniform<double>(Dims{3, 3, 2, 3}, -1.0, 1.0, rng);

        const std::vector<std::pair<std::string, std::function<GradCheckReport()>>> cases{
            {"conv2d", [&] { return grad_check<double>([&] { return mse_reduce(conv2d(img, kern, stride, pad), conv_t); }, {img, kern}, 1e-4); }},
            {"add", [&] { return grad_check<double>([&] { return mse_reduce(add(a, b), t4); }, {a, b}, 1e-4); }},
            {"sub", [&] { return grad_check<double>([&] { return mse_reduce(sub(a, b), t4); }, {a, b}, 1e-4); }},
            {"scalar_mul", [&] { return grad_check<double>([&] { return mse_reduce(scalar_mul(a, -1.7), t4); }, {a}, 1e-4); }},
            {"scale_by", [&] { return grad_check<double>([&] { return mse_reduce(scale_by(a, c), t4); }, {a, c}, 1e-4); }},
            {"relu", [&] { return grad_check<double>([&] { return mse_reduce(relu(a), t4); }, {a}, 1e-4); }},
            {"clamp", [&] { return grad_check<double>([&] { return mse_reduce(clamp(a, -0.5, 0.5), t4); }, {a}, 1e-4); }},
            {"add_channel_bias", [&] { return grad_check<double>([&] { return mse_reduce(add_channel_bias(a, bias), t4); }, {a, bias}, 1e-4); }},
            {"broadcast_to", [&] { return grad_check<double>([&] { return mse_reduce(broadcast_to(small, a.dims()), t4); }, {small}, 1e-4); }},
            {"channel_mean", [&] { return grad_check<double>([&] { return sum_squares(channel_mean(a)); }, {a}, 1e-4); }},
            {"center_over_axes", [&] { return grad_check<double>([&] { return mse_reduce(center_over_axes(a, 1, 2), t4); }, {a}, 1e-4); }},
            {"concat/split", [&] {
                 return grad_check<double>([&] {
                     auto [x, y] = split_axis0(concat_axis0(a, b), 1);
                     return add(mse_reduce(x, split_axis0(t4, 1).first), scalar_mul(sum_squares(y), 0.5));
                 }, {a, b}, 1e-4);
             }},
            {"upsample_nearest_2x", [&] { return grad_check<double>([&] { return mse_reduce(upsample_nearest_2x(t2), t4); }, {t2}, 1e-4); }},
            {"avgpool_2x", [&] { return grad_check<double>([&] { return mse_reduce(avgpool_2x(a), t2); }, {a}, 1e-4); }},
            {"l1_reduce", [&] { return grad_check<double>([&] { return l1_reduce(a, b); }, {a, b}, 1e-4); }},
            {"sobel_gradients", [&] { return grad_check<double>([&] { return mse_reduce(sobel_gradients(t8), sobel_t); }, {t8}, 1e-4); }},
            {"shape_kernel", [&] { return grad_check<double>([&] { return mse_reduce(shape_kernel(k3, c, w3), k3t); }, {k3, c, w3}, 1e-4); }},
        };
        for (const auto& [name, run] : cases) {
            const auto r = run();
            checked += r.elements_checked;
            one_sided += r.one_sided;
            unmeasurable += r.unmeasurable;
            if (r.max_relative_error >= worst) {
                worst = r.max_relative_error;
                where = name + " (seed " + std::to_string(s) + ")";
            }
        }
    }
    return finish("gradient check: tensor ops (" + std::to_string(seeds) + " seeds)", worst, tol,
                  worst <= tol && unmeasurable == 0,
                  "worst at " + where + "; " + std::to_string(checked) + " elements, " + std::to_string(one_sided) +
                      " one-sided, " + std::to_string(unmeasurable) + " unmeasurable",
                  timer);
}

PropertyResult check_stream_independence(int seeds, std::uint64_t seed, double tol) {
    Timer timer;
    double worst = 0;
    for (int s = 0; s < seeds; ++s) {
        const auto sd = seed + static_cast<std::uint64_t>(s);
        Rng rng(sd);
        auto net = DemoireNet::build(small_net(LayerKind::shapeconv, sd));
        randomize_shape_weights(net, rng, 0.3);
        const Model<float> model = [&net](const Tensor& x) { return net.forward(x); };
        const auto x = random_uniform<float>(Dims{2, 16, 16, 3}, 0.0, 1.0, rng);
        const auto direct = inference(model, x);
        const auto dual = model(make_dual_batch(x).combined);
        worst = std::max(worst, max_rel_error(direct, split_axis0(dual, x.dim(0)).first));
    }
    return finish("stream independence (" + std::to_string(seeds) + " seeds)", worst, tol, worst <= tol, "", timer);
}

PropertyResult check_shape_transform_zero_mean(int images, std::uint64_t seed, double tol) {
    Timer timer;
    Rng rng(seed);
    double worst = 0;
    for (int i = 0; i < images; ++i) {
        const auto h = pick(rng, 1, 48), w = pick(rng, 1, 48);
        auto img = random_uniform<float>(Dims{1, h, w, 3}, 0.0, 1.0, rng);
        auto dual = make_dual_batch(img);
        const auto shape = split_axis0(dual.combined, 1).second;
        auto d = shape.data();
        for (std::size_t c = 0; c < 3; ++c) {
            double sum = 0;
            for (std::size_t j = c; j < d.size(); j += 3) sum += d[j];
            worst = std::max(worst, std::abs(sum / static_cast<double>(h * w)));
        }
    }
    return finish("shape-stream zero mean (" + std::to_string(images) + " images)", worst, tol, worst <= tol, "",
                  timer);
}

PropertyResult check_metric_sanity() {
    Timer timer;
    Rng rng(5);
    const auto a = random_uniform<float>(Dims{32, 32, 3}, 0.0, 0.9, rng);
    const Tensor zeros(Dims{32, 32, 3}, 0.0f), ones(Dims{32, 32, 3}, 1.0f);
    const Tensor base(Dims{32, 32, 3}, 0.25f), shifted(Dims{32, 32, 3}, 0.35f);

    const double self = psnr(a, a);
    const double unit = psnr(zeros, ones);
    // 0.1 is not a float; the residual is float(0.35) - 0.25, within 1e-7 of 0.1.
    const double shift = psnr(base, shifted);
    const double s = ssim(a, a);

    std::vector<std::string> failures;
    if (self != kPsnrCapDb) failures.push_back("psnr(a,a)=" + std::to_string(self));
    if (unit != 0.0) failures.push_back("psnr(0,1)=" + std::to_string(unit));
    if (std::abs(shift - 20.0) > 1e-5) failures.push_back("psnr(+0.1)=" + std::to_string(shift));
    if (s != 1.0) failures.push_back("ssim(a,a)=" + std::to_string(s));
    char buf[160];
    std::snprintf(buf, sizeof buf, "psnr self=%.6f unit=%.6f shift=%.6f; ssim self=%.9f", self, unit, shift, s);
    std::string detail = buf;
    for (const auto& f : failures) detail += "; FAIL " + f;
    return finish("metric sanity", std::abs(shift - 20.0), 1e-5, failures.empty(), detail, timer);
}

std::vector<PropertyResult> run_property_suite(const std::function<void(const PropertyResult&)>& on_result) {
    std::vector<std::function<PropertyResult()>> suite{
        [] { return check_formulation_equivalence(); },
        [] { return check_layer_fusion(); },
        [] { return check_network_fusion(); },
        [] { return check_identity_init(); },
        [] { return check_op_gradients(); },
        [] { return check_gradients(); },
        [] { return check_stream_independence(); },
        [] { return check_shape_transform_zero_mean(); },
        [] { return check_metric_sanity(); },
    };
    std::vector<PropertyResult> results;
    for (const auto& run : suite) {
        results.push_back(run());
        if (on_result) on_result(results.back());
    }
    return results;
}

std::string format_result(const PropertyResult& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s  %-58s measured=%.3g threshold=%.3g (%.2fs)%s%s", r.passed ? "PASS" : "FAIL",
                  r.name.c_str(), r.measured, r.threshold, r.seconds, r.detail.empty() ? "" : "  ",
                  r.detail.c_str());
    return buf;
}

}  // namespace shapemoire
