#include <doctest.h>

#include "oracles.hpp"
#include "shapemoire/metrics.hpp"
#include "shapemoire/ops.hpp"
#include "shapemoire/random.hpp"
#include "shapemoire/shape_stream.hpp"

using namespace shapemoire;

namespace {

std::array<double, 3> channel_means(const Tensor& img) {
    std::array<double, 3> m{};
    auto d = img.data();
    for (std::size_t i = 0; i < d.size(); ++i) m[i % 3] += d[i];
    for (auto& v : m) v /= static_cast<double>(d.size() / 3);
    return m;
}

}  // namespace

TEST_CASE("shape_transform") {
    Tensor c(Dims{1, 4, 4, 3}, 0.5f);
    CHECK(max_abs(shape_transform(c).data()) == 0.0f);

    Tensor img(Dims{1, 4, 4, 3});
    Rng rng(2);
    for (std::size_t i = 0; i < img.mutable_data().size(); ++i) {
        const double mean = i % 3 == 0 ? 0.2 : (i % 3 == 1 ? 0.5 : 0.8);
        img.mutable_data()[i] = static_cast<float>(mean + rng.uniform(-0.1, 0.1));
    }
    for (double m : channel_means(shape_transform(img))) CHECK(std::abs(m) <= 1e-6);

    auto x = random_uniform<float>(Dims{3, 8, 8, 3}, 0, 1, rng);
    auto once = shape_transform(x);
    CHECK(max_abs_diff(shape_transform(once), once) <= 1e-6f);
}

TEST_CASE("make_dual_batch") {
    Tensor c(Dims{1, 4, 4, 3}, 0.3f);
    auto d = make_dual_batch(c);
    CHECK(d.n == 1);
    CHECK(d.combined.dims() == Dims{2, 4, 4, 3});
    auto [raw, shape] = split_axis0(d.combined, 1);
    CHECK(bitwise_equal(raw, c));
    CHECK(max_abs(shape.data()) == 0.0f);

    Rng rng(5);
    auto x = random_uniform<float>(Dims{3, 8, 8, 3}, 0, 1, rng);
    auto dx = make_dual_batch(x);
    CHECK(dx.combined.dims() == Dims{6, 8, 8, 3});
    auto [r2, s2] = split_axis0(dx.combined, 3);
    CHECK(bitwise_equal(r2, x));
    CHECK(bitwise_equal(s2, shape_transform(x)));
}

TEST_CASE("total_loss") {
    Rng rng(7);
    auto gt = random_uniform<float>(Dims{2, 16, 16, 3}, 0, 1, rng);
    auto perfect = concat_axis0(gt, shape_transform(gt));
    auto zero = total_loss(perfect, gt, 0.1);
    CHECK(zero.report.l_base == 0.0);
    CHECK(zero.report.l_shape == 0.0);
    CHECK(zero.report.l_total == 0.0);

    auto out = random_uniform<float>(Dims{4, 16, 16, 3}, 0, 1, rng);
    auto no_proxy = total_loss(out, gt, 0.0);
    auto [raw, shape] = split_axis0(out, 2);
    CHECK(no_proxy.report.l_base == doctest::Approx(oracle::l1(raw, gt)).epsilon(1e-6));

    // Residual on the raw stream only: l_total - l_shape is the raw-stream loss.
    auto r = random_uniform<float>(gt.dims(), -0.2, 0.2, rng);
    auto noisy = add(gt, r);
    auto loss = total_loss(concat_axis0(noisy, shape_transform(gt)), gt, 0.1);
    const double expected = oracle::l1(noisy, gt) + 0.1 * oracle::lp_proxy(noisy, gt);
    CHECK(loss.report.l_total - loss.report.l_shape == doctest::Approx(expected).epsilon(1e-6));
    CHECK(loss.report.l_total == loss.report.l_base + loss.report.l_shape);
    CHECK(loss.report.l_total >= 0.0);
    CHECK(loss.report.lambda == 0.1);
    CHECK(static_cast<double>(loss.total.item()) == doctest::Approx(loss.report.l_total).epsilon(1e-6));

    auto shaped = total_loss(out, gt, 0.1);
    CHECK(shaped.report.l_shape > 0.0);

    CHECK_THROWS_AS(total_loss(out, random_uniform<float>(Dims{3, 16, 16, 3}, 0, 1, rng), 0.1), ShapeError);
}

TEST_CASE("inference drops the shape stream") {
    Rng rng(3);
    auto k = random_uniform<float>(Dims{3, 3, 3, 3}, -1, 1, rng);
    const Model<float> model = [&k](const Tensor& x) { return relu(conv2d(x, k, 1, 1)); };
    auto x = random_uniform<float>(Dims{2, 8, 8, 3}, 0, 1, rng);
    auto direct = inference(model, x);
    auto dual = model(make_dual_batch(x).combined);
    CHECK(max_rel_error(direct, split_axis0(dual, 2).first) <= 1e-6);

    // Constant input through a conv-only model: constant interior per channel.
    const Model<float> conv_only = [&k](const Tensor& x) { return conv2d(x, k); };
    auto y = inference(conv_only, Tensor(Dims{1, 6, 6, 3}, 0.25f));
    for (std::int64_t i = 3; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(y.data()[i % 3]));

    // Per-sample outputs do not depend on batch companions.
    auto [a, b] = split_axis0(x, 1);
    auto swapped = inference(model, concat_axis0(b, a));
    auto [sb, sa] = split_axis0(swapped, 1);
    CHECK(bitwise_equal(sa, split_axis0(direct, 1).first));
    CHECK(bitwise_equal(sb, split_axis0(direct, 1).second));
}
