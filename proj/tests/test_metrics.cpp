#include <doctest.h>

#include "oracles.hpp"
#include "shapemoire/metrics.hpp"
#include "shapemoire/ops.hpp"
#include "shapemoire/random.hpp"

using namespace shapemoire;

TEST_CASE("psnr") {
    Rng rng(1);
    auto a = random_uniform<float>(Dims{16, 16, 3}, 0, 0.9, rng);
    CHECK(psnr(a, a) == kPsnrCapDb);
    CHECK(psnr(Tensor(Dims{8, 8, 3}, 0.0f), Tensor(Dims{8, 8, 3}, 1.0f)) == 0.0);
    CHECK(psnr(Tensor(Dims{8, 8, 3}, 0.25f), Tensor(Dims{8, 8, 3}, 0.35f)) == doctest::Approx(20.0).epsilon(1e-7));
    CHECK_THROWS_AS(psnr(a, Tensor(Dims{16, 16, 1})), ShapeError);

    // Strictly decreasing in noise amplitude.
    auto base = random_uniform<float>(Dims{32, 32, 3}, 0.2, 0.8, rng);
    auto noise = random_uniform<float>(base.dims(), -1, 1, rng);
    double prev = psnr(base, base);
    for (double amp : {0.001, 0.01, 0.03, 0.1, 0.2}) {
        const double v = psnr(add(base, scalar_mul(noise, amp)), base);
        CHECK(v < prev);
        CHECK(v >= 0.0);
        prev = v;
    }
}

TEST_CASE("ssim") {
    Rng rng(2);
    auto a = random_uniform<float>(Dims{24, 24, 3}, 0, 1, rng);
    CHECK(ssim(a, a) == 1.0);

    Tensor bin(Dims{32, 32, 3}), inv(Dims{32, 32, 3});
    for (std::int64_t i = 0; i < bin.numel(); ++i) {
        const float v = rng.uniform() < 0.5 ? 0.0f : 1.0f;
        bin.mutable_data()[i] = v;
        inv.mutable_data()[i] = 1.0f - v;
    }
    CHECK(ssim(bin, inv) < 0.2);

    auto b = random_uniform<float>(a.dims(), 0, 1, rng);
    CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-7);
    CHECK(ssim(a, b) <= 1.0);
    CHECK_THROWS_AS(ssim(Tensor(Dims{10, 16, 3}), Tensor(Dims{10, 16, 3})), GeometryError);

    // Batches average per image and ignore order.
    auto batch = random_uniform<float>(Dims{3, 16, 16, 3}, 0, 1, rng);
    auto ref = random_uniform<float>(Dims{3, 16, 16, 3}, 0, 1, rng);
    auto r1 = evaluate_batch(batch, ref);
    auto [b0, brest] = split_axis0(batch, 1);
    auto [r0, rrest] = split_axis0(ref, 1);
    auto r2 = evaluate_batch(concat_axis0(brest, b0), concat_axis0(rrest, r0));
    CHECK(r1.n_images == 3);
    CHECK(r1.psnr_db == doctest::Approx(r2.psnr_db).epsilon(1e-12));
    CHECK(r1.ssim == doctest::Approx(r2.ssim).epsilon(1e-12));
}

TEST_CASE("l1 and lp_proxy") {
    Rng rng(3);
    auto a = random_uniform<float>(Dims{1, 12, 12, 3}, 0, 1, rng);
    CHECK(l1(a, a) == 0.0);
    CHECK(lp_proxy(a, a) == 0.0);
    Tensor shifted = a.clone();
    for (auto& v : shifted.mutable_data()) v += 0.25f;
    CHECK(lp_proxy(a, shifted) <= 1e-6);
    CHECK(l1(a, shifted) == doctest::Approx(0.25).epsilon(1e-5));

    auto b = random_uniform<float>(a.dims(), 0, 1, rng);
    CHECK(std::abs(lp_proxy(a, b) - oracle::lp_proxy(a, b)) <= 1e-6);
    CHECK(std::abs(l1(a, b) - oracle::l1(a, b)) <= 1e-7);

    // Unbatched images are accepted too.
    auto a3 = random_uniform<float>(Dims{12, 12, 3}, 0, 1, rng);
    auto b3 = random_uniform<float>(Dims{12, 12, 3}, 0, 1, rng);
    CHECK(lp_proxy(a3, b3) > 0.0);
}
