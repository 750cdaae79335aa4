#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "shapemoire/checkpoint.hpp"
#include "shapemoire/grad_check.hpp"
#include "shapemoire/ops.hpp"
#include "shapemoire/parallel.hpp"
#include "shapemoire/random.hpp"

using namespace shapemoire;

TEST_CASE("tensor construction and invariants") {
    Tensor t(Dims{2, 3}, 1.5f);
    CHECK(t.numel() == 6);
    CHECK(t.data().size() == 6);
    CHECK(t.dim(-1) == 3);
    CHECK_FALSE(t.has_grad());
    auto g = t.grad_buffer();
    CHECK(g.size() == 6);
    CHECK(t.has_grad());
    CHECK_THROWS_AS(Tensor(Dims{2, 2}, std::vector<float>(3)), ShapeError);

    Tensor alias = t;
    CHECK(alias.is_same(t));
    auto copy = t.clone();
    copy.mutable_data()[0] = 9.0f;
    CHECK(t.data()[0] == 1.5f);
}

TEST_CASE("conv2d trivial cases") {
    Tensor x(Dims{1, 1, 1, 1}, 3.0f), k(Dims{1, 1, 1, 1}, 2.0f);
    CHECK(conv2d(x, k).item() == 6.0f);
    Tensor ones(Dims{1, 2, 2, 1}, 1.0f), k2(Dims{2, 2, 1, 1}, 1.0f);
    auto y = conv2d(ones, k2);
    CHECK(y.dims() == Dims{1, 1, 1, 1});
    CHECK(y.item() == 4.0f);
}

TEST_CASE("conv2d matches the direct-loop oracle") {
    Rng rng(42);
    auto x = random_uniform<float>(Dims{2, 8, 8, 3}, -1, 1, rng);
    auto k = random_uniform<float>(Dims{3, 3, 3, 4}, -1, 1, rng);
    CHECK(max_abs_diff(conv2d(x, k, 1, 0), oracle::conv2d(x, k, 1, 0)) <= 1e-6f);

    // Sweep geometries: kernels 1-5, strides 1-2, pads 0-2.
    float worst = 0;
    for (std::int64_t kk = 1; kk <= 5; ++kk)
        for (std::int64_t stride = 1; stride <= 2; ++stride)
            for (std::int64_t pad = 0; pad <= 2; ++pad) {
                std::int64_t h = 9;
                while ((h + 2 * pad - kk) % stride != 0 || h + 2 * pad < kk) ++h;
                auto xi = random_uniform<float>(Dims{2, h, h, 3}, -1, 1, rng);
                auto ki = random_uniform<float>(Dims{kk, kk, 3, 5}, -1, 1, rng);
                worst = std::max(worst, max_abs_diff(conv2d(xi, ki, stride, pad), oracle::conv2d(xi, ki, stride, pad)));
            }
    // 75-term float dot products; the oracle accumulates in double.
    CHECK(worst <= 1e-5f);
}

TEST_CASE("conv2d errors") {
    Tensor x(Dims{1, 5, 5, 2}), k(Dims{3, 3, 3, 1});
    CHECK_THROWS_AS(conv2d(x, k), ShapeError);
    Tensor k2(Dims{2, 2, 2, 1});
    CHECK_THROWS_AS(conv2d(x, k2, 2, 0), GeometryError);  // (5 - 2) / 2 not integral
    Tensor k6(Dims{6, 6, 2, 1});
    CHECK_THROWS_AS(conv2d(x, k6), GeometryError);
    CHECK_THROWS_AS(conv2d(x, Tensor(Dims{1, 1, 2, 1}), 0, 0), GeometryError);
}

TEST_CASE("channel_mean") {
    Tensor t(Dims{2, 2, 1}, std::vector<float>{1, 2, 3, 6});
    CHECK(channel_mean(t).item() == 3.0f);
    Tensor c(Dims{3, 3, 2}, 0.7f);
    auto m = channel_mean(c);
    CHECK(m.data()[0] == doctest::Approx(0.7));
    CHECK(m.data()[1] == doctest::Approx(0.7));
    Tensor sym(Dims{2, 2, 2}, std::vector<float>{0, 1, 0, -1, 0, 1, 0, -1});
    auto s = channel_mean(sym);
    CHECK(s.dims() == Dims{1, 1, 2});
    CHECK(s.data()[0] == 0.0f);
    CHECK(s.data()[1] == 0.0f);

    Rng rng(3);
    auto r = random_uniform<float>(Dims{4, 5, 3}, -2, 2, rng);
    auto centered = sub(r, broadcast_to(channel_mean(r), r.dims()));
    CHECK(max_abs(channel_mean(centered).data()) <= 1e-6f);
    CHECK_THROWS_AS(channel_mean(Tensor(Dims{3})), ShapeError);
}

TEST_CASE("elementwise suite") {
    Rng rng(1);
    auto a = random_uniform<float>(Dims{2, 4, 4, 3}, -1, 1, rng);
    auto b = random_uniform<float>(Dims{3, 4, 4, 3}, -1, 1, rng);
    auto [a2, b2] = split_axis0(concat_axis0(a, b), 2);
    CHECK(bitwise_equal(a, a2));
    CHECK(bitwise_equal(b, b2));

    Tensor r(Dims{2}, std::vector<float>{-1, 2});
    auto rr = relu(r);
    CHECK(rr.data()[0] == 0.0f);
    CHECK(rr.data()[1] == 2.0f);
    CHECK(l1_reduce(a, a).item() == 0.0f);
    CHECK(mse_reduce(a, a).item() == 0.0f);
    CHECK(add(a, a).data()[5] == 2 * a.data()[5]);
    CHECK(sub(a, a).data()[5] == 0.0f);
    CHECK(scalar_mul(a, 3.0).data()[7] == doctest::Approx(3 * a.data()[7]));

    auto up = upsample_nearest_2x(a);
    CHECK(up.dims() == Dims{2, 8, 8, 3});
    CHECK(bitwise_equal(avgpool_2x(up), a));
    CHECK_THROWS_AS(avgpool_2x(Tensor(Dims{1, 3, 4, 1})), GeometryError);
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(split_axis0(a, 3), ShapeError);
}

TEST_CASE("sobel_gradients match the per-pixel oracle") {
    Rng rng(11);
    auto x = random_uniform<float>(Dims{2, 7, 9, 3}, 0, 1, rng);
    auto s = sobel_gradients(x);
    CHECK(s.dims() == Dims{2, 5, 7, 6});
    const auto ref = oracle::sobel(x);
    REQUIRE(ref.size() == static_cast<std::size_t>(s.numel()));
    double worst = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - s.data()[i]));
    CHECK(worst <= 1e-6);
}

TEST_CASE("grad_check on simple functions") {
    Rng rng(2);
    auto x = random_uniform<double>(Dims{5, 3}, -1, 1, rng);
    auto r = grad_check<double>([&] { return sum_squares(x); }, {x});
    CHECK(r.max_relative_error <= 1e-4);
    CHECK(r.elements_checked == 15);

    auto xf = random_uniform<float>(Dims{5, 3}, -1, 1, rng);
    CHECK(grad_check<float>([&] { return sum_squares(xf); }, {xf}).max_relative_error <= 1e-2);

    auto img = random_uniform<double>(Dims{1, 6, 6, 2}, -1, 1, rng);
    auto k = random_uniform<double>(Dims{3, 3, 2, 2}, -1, 1, rng);
    auto target = random_uniform<double>(Dims{1, 4, 4, 2}, -1, 1, rng);
    CHECK(grad_check<double>([&] { return mse_reduce(conv2d(img, k), target); }, {img, k}).max_relative_error <= 1e-3);

    CHECK_THROWS_AS(grad_check<double>([&] { return sum_squares(x); }, {x}, 1e-5), ValidationError);
    CHECK_THROWS_AS(grad_check<double>([&] { return scalar_mul(sum_squares(x), 1e308 * 1e10); }, {x}),
                    NumericError);
}

TEST_CASE("grad_check measures one-sided across a kink") {
    // |x - 0.00005| has its kink inside the +-1e-4 stencil around 0.
    TensorD x(Dims{1}, std::vector<double>{0.0});
    TensorD t(Dims{1}, std::vector<double>{0.00005});
    auto r = grad_check<double>([&] { return l1_reduce(x, t); }, {x}, 1e-4);
    CHECK(r.one_sided == 1);
    CHECK(r.max_relative_error <= 1e-9);
}

TEST_CASE("backward accumulates and is deterministic") {
    Rng rng(8);
    auto x = random_uniform<float>(Dims{4, 8, 8, 3}, -1, 1, rng);
    auto k = random_uniform<float>(Dims{3, 3, 3, 4}, -1, 1, rng);
    auto run = [&] {
        k.clear_grad();
        GradTape<float> tape;
        tape.backward(sum_squares(relu(conv2d(x, k, 1, 1))));
        return std::vector<float>(k.grad().begin(), k.grad().end());
    };
    k.set_requires_grad(true);
    const auto g1 = run();
    const auto g2 = run();
    CHECK(g1 == g2);

    // Thread count does not change results.
    set_num_threads(3);
    const auto g3 = run();
    set_num_threads(1);
    CHECK(g1 == g3);

    // Two uses of the same tensor add up.
    k.clear_grad();
    {
        GradTape<float> tape;
        tape.backward(add(sum_squares(k), sum_squares(k)));
    }
    for (std::int64_t i = 0; i < k.numel(); ++i) CHECK(k.grad()[i] == doctest::Approx(4 * k.data()[i]));
    CHECK_THROWS_AS(GradTape<float>().backward(k), ShapeError);
}

TEST_CASE("checkpoint round trip") {
    Rng rng(4);
    std::vector<NamedTensor> tensors{{"a.K", random_uniform<float>(Dims{3, 3, 2, 4}, -1, 1, rng)},
                                     {"a.bias", random_uniform<float>(Dims{4}, -1, 1, rng)}};
    std::stringstream ss;
    write_checkpoint(ss, tensors);
    const auto bytes = ss.str();
    CHECK(bytes.substr(0, 4) == "SHPM");
    auto back = read_checkpoint(ss);
    REQUIRE(back.size() == 2);
    CHECK(back[0].name == "a.K");
    CHECK(bitwise_equal(back[0].tensor, tensors[0].tensor));
    CHECK(bitwise_equal(back[1].tensor, tensors[1].tensor));

    std::stringstream bad("XXXX");
    CHECK_THROWS_AS(read_checkpoint(bad), ValidationError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/model.shpm"), NotFoundError);
    std::stringstream dup;
    CHECK_THROWS(write_checkpoint(dup, {tensors[0], tensors[0]}));
}
