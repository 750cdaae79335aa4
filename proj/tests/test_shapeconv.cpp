#include <doctest.h>

#include "oracles.hpp"
#include "shapemoire/grad_check.hpp"
#include "shapemoire/ops.hpp"
#include "shapemoire/random.hpp"
#include "shapemoire/shapeconv.hpp"

using namespace shapemoire;

namespace {

ShapeConvParams random_params(Rng& rng, std::int64_t k, std::int64_t cin, std::int64_t cout, std::int64_t stride = 1,
                              std::int64_t pad = 0) {
    ShapeConvParams p;
    p.kernel = random_uniform<float>(Dims{k, k, cin, cout}, -1, 1, rng);
    p.w_base = random_uniform<float>(Dims{1}, -2, 2, rng);
    p.w_shape = random_uniform<float>(Dims{k * k, k, k, cin}, -1, 1, rng);
    p.stride = stride;
    p.pad = pad;
    return p;
}

}  // namespace

TEST_CASE("decompose") {
    Tensor c(Dims{2, 2, 1}, 5.0f);
    auto d = decompose(c);
    CHECK(d.base.item() == 5.0f);
    CHECK(max_abs(d.shape.data()) == 0.0f);

    Tensor p(Dims{2, 2, 1}, std::vector<float>{1, 2, 3, 6});
    auto e = decompose(p);
    CHECK(e.base.item() == 3.0f);
    CHECK(e.shape.data()[0] == -2.0f);
    CHECK(e.shape.data()[1] == -1.0f);
    CHECK(e.shape.data()[2] == 0.0f);
    CHECK(e.shape.data()[3] == 3.0f);
    CHECK(bitwise_equal(add(broadcast_to(e.base, p.dims()), e.shape), p));

    Rng rng(1);
    auto r = random_uniform<float>(Dims{3, 3, 4}, -1, 1, rng);
    CHECK(max_abs(channel_mean(decompose(r).shape).data()) <= 1e-6f);
}

TEST_CASE("base_product") {
    Tensor base(Dims{1, 1, 1}, 3.0f);
    CHECK(base_product(Tensor::scalar(1.0f), base).item() == 3.0f);
    CHECK(base_product(Tensor::scalar(0.0f), base).item() == 0.0f);
    CHECK(base_product(Tensor::scalar(2.0f), base).item() == 6.0f);
}

TEST_CASE("shape_product") {
    Rng rng(7);
    auto s = random_uniform<float>(Dims{3, 3, 4}, -1, 1, rng);
    CHECK(bitwise_equal(shape_product(identity_shape_weights<float>(3, 3, 4), s), s));
    CHECK(max_abs(shape_product(Tensor(Dims{9, 3, 3, 4}), s).data()) == 0.0f);

    auto w = random_uniform<float>(Dims{9, 3, 3, 4}, -1, 1, rng);
    const auto ref = oracle::shape_product(w, s);
    auto got = shape_product(w, s);
    double worst = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - got.data()[i]));
    CHECK(worst <= 1e-6);

    // Non-square kernels index source positions row-major.
    auto s2 = random_uniform<float>(Dims{2, 3, 2}, -1, 1, rng);
    auto w2 = random_uniform<float>(Dims{6, 2, 3, 2}, -1, 1, rng);
    const auto ref2 = oracle::shape_product(w2, s2);
    auto got2 = shape_product(w2, s2);
    for (std::size_t i = 0; i < ref2.size(); ++i) CHECK(got2.data()[i] == doctest::Approx(ref2[i]).epsilon(1e-5));

    CHECK_THROWS_AS(shape_product(w, Tensor(Dims{3, 3, 3})), ShapeError);
}

TEST_CASE("shape path ignores per-channel constant shifts") {
    Rng rng(12);
    auto patch = random_uniform<float>(Dims{3, 3, 2}, -1, 1, rng);
    auto shifted = patch.clone();
    for (std::size_t i = 0; i < shifted.mutable_data().size(); ++i) shifted.mutable_data()[i] += i % 2 ? 0.75f : -1.25f;
    auto w = random_uniform<float>(Dims{9, 3, 3, 2}, -1, 1, rng);
    const auto a = shape_product(w, decompose(patch).shape);
    const auto b = shape_product(w, decompose(shifted).shape);
    CHECK(max_abs_diff(a, b) <= 1e-5f);
}

TEST_CASE("forward_patch") {
    Rng rng(123);
    auto p = init_identity<float>(3, 3, 3, 4, 1.0, rng, 1, 1);
    auto x = random_uniform<float>(Dims{2, 6, 6, 3}, 0, 1, rng);
    // Patch-by-patch recombination rounds differently from the GEMM path.
    CHECK(max_rel_error(forward_patch(p, x), conv2d(x, p.kernel, 1, 1)) <= 1e-6);

    // Constant image: shape term vanishes, leaving conv with W_B * K.
    auto q = random_params(rng, 3, 2, 3);
    Tensor c(Dims{1, 5, 5, 2}, 0.4f);
    CHECK(max_rel_error(forward_patch(q, c), conv2d(c, scale_by(q.kernel, q.w_base))) <= 1e-6);

    auto r = random_params(rng, 3, 3, 4, 1, 1);
    auto xr = random_uniform<float>(Dims{2, 7, 7, 3}, -1, 1, rng);
    CHECK(forward_patch(r, xr).dims() == conv2d(xr, r.kernel, 1, 1).dims());
    CHECK(max_rel_error(forward_patch(r, xr), forward_kernel(r, xr)) <= 1e-5);
}

TEST_CASE("forward_kernel") {
    Rng rng(123);
    auto p = init_identity<float>(3, 3, 3, 4, 1.0, rng, 1, 1);
    auto x = random_uniform<float>(Dims{2, 6, 6, 3}, 0, 1, rng);
    CHECK(bitwise_equal(forward_kernel(p, x), conv2d(x, p.kernel, 1, 1)));

    auto one = random_params(rng, 1, 3, 2);
    auto xo = random_uniform<float>(Dims{1, 4, 4, 3}, -1, 1, rng);
    CHECK(max_rel_error(forward_kernel(one, xo), conv2d(xo, scale_by(one.kernel, one.w_base))) <= 1e-6);
}

TEST_CASE("kernel recombination is the adjoint of patch mixing") {
    // Mixing the kernel with the same index map as the patch (rather than its
    // transpose) and skipping the re-centring gives a different layer.
    Rng rng(99);
    auto p = random_params(rng, 3, 2, 2);
    auto x = random_uniform<float>(Dims{1, 5, 5, 2}, -1, 1, rng);
    const auto reference = forward_patch(p, x);

    Tensor literal(p.kernel.dims());
    const std::int64_t cin = 2, cout = 2;
    for (std::int64_t o = 0; o < cout; ++o) {
        Tensor slice(Dims{3, 3, cin});
        for (std::int64_t i = 0; i < 9 * cin; ++i) slice.mutable_data()[i] = p.kernel.data()[i * cout + o];
        auto d = decompose(slice);
        auto recombined = add(broadcast_to(base_product(p.w_base, d.base), slice.dims()), shape_product(p.w_shape, d.shape));
        for (std::int64_t i = 0; i < 9 * cin; ++i) literal.mutable_data()[i * cout + o] = recombined.data()[i];
    }
    CHECK(max_rel_error(conv2d(x, literal), reference) > 1e-2);
    CHECK(max_rel_error(forward_kernel(p, x), reference) <= 1e-5);
}

TEST_CASE("fuse") {
    Rng rng(9);
    auto id = init_identity<float>(3, 3, 4, 5, 1.0, rng);
    CHECK(bitwise_equal(fuse(id).kernel, id.kernel));

    auto z = random_params(rng, 3, 2, 2);
    z.w_base.mutable_data()[0] = 0;
    for (auto& v : z.w_shape.mutable_data()) v = 0;
    CHECK(max_abs(fuse(z).kernel.data()) == 0.0f);

    auto p = random_params(rng, 3, 3, 4, 1, 1);
    const auto f = fuse(p);
    CHECK(f.kernel.dims() == p.kernel.dims());
    CHECK(f.parameter_count() == 3 * 3 * 3 * 4);
    double worst = 0;
    for (int i = 0; i < 20; ++i) {
        auto x = random_uniform<float>(Dims{1, 8, 8, 3}, -1, 1, rng);
        worst = std::max(worst, max_rel_error(conv2d(x, f.kernel, f.stride, f.pad), forward_kernel(p, x)));
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("init_identity") {
    Rng rng(0);
    auto p = init_identity<float>(3, 3, 16, 8, 1.0, rng);
    CHECK(p.extra_parameter_count() == 1297);
    CHECK(p.w_base.item() == 1.0f);
    CHECK(bitwise_equal(p.w_shape, identity_shape_weights<float>(3, 3, 16)));
    const double bound = std::sqrt(3.0 / (9 * 16));
    CHECK(max_abs(p.kernel.data()) <= bound);
    CHECK(max_abs(p.kernel.data()) > 0.5 * bound);
    CHECK_THROWS_AS(init_identity<float>(0, 3, 1, 1, 1.0, rng), ShapeError);

    auto bad = p;
    bad.w_shape = Tensor(Dims{9, 3, 3, 15});
    CHECK_THROWS_AS(bad.validate(), ShapeError);
}

TEST_CASE("ShapeConv gradients") {
    Rng rng(31);
    BasicShapeConvParams<double> p;
    p.kernel = random_uniform<double>(Dims{3, 3, 2, 3}, -1, 1, rng);
    p.w_base = random_uniform<double>(Dims{1}, 0.5, 1.5, rng);
    p.w_shape = random_uniform<double>(Dims{9, 3, 3, 2}, -1, 1, rng);
    p.pad = 1;
    auto x = random_uniform<double>(Dims{2, 5, 5, 2}, -1, 1, rng);
    auto t = random_uniform<double>(Dims{2, 5, 5, 3}, -1, 1, rng);
    auto r = grad_check<double>([&] { return mse_reduce(forward_kernel(p, x), t); }, {p.kernel, p.w_base, p.w_shape, x});
    CHECK(r.max_relative_error <= 1e-3);
}
