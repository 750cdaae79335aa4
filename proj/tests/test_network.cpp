#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "shapemoire/grad_check.hpp"
#include "shapemoire/network.hpp"
#include "shapemoire/ops.hpp"
#include "shapemoire/random.hpp"
#include "shapemoire/shape_stream.hpp"

using namespace shapemoire;

namespace {

std::int64_t count_by_dims(const NetConfig& c) {
    // Summation over layer dims: (k*k*in*out + out) per layer.
    const std::int64_t kk = c.kernel_size * c.kernel_size;
    std::int64_t n = 0;
    for (std::size_t s = 0; s < c.widths.size(); ++s) {
        const auto in = s == 0 ? 3 : c.widths[s - 1];
        const auto w = c.widths[s];
        n += kk * in * w + w;
        n += c.blocks_per_scale * (kk * w * w + w);
        n += kk * w * 3 + 3;
    }
    return n;
}

void perturb(DemoireNet& net, Rng& rng) {
    for (auto& layer : net.layers()) {
        for (auto& v : layer.params.kernel.mutable_data()) v += static_cast<float>(rng.uniform(-0.05, 0.05));
        for (auto& v : layer.bias.mutable_data()) v = static_cast<float>(rng.uniform(-0.05, 0.05));
        if (!layer.shape_weights) continue;
        layer.params.w_base.mutable_data()[0] = static_cast<float>(rng.uniform(0.5, 1.5));
        for (auto& v : layer.params.w_shape.mutable_data()) v += static_cast<float>(rng.uniform(-0.2, 0.2));
    }
}

}  // namespace

TEST_CASE("build") {
    NetConfig c;
    auto net = DemoireNet::build(c);
    CHECK(net.parameter_count() == count_by_dims(c));
    CHECK(net.parameter_count() == 123609);
    CHECK(net.parameter_count() < 200000);
    CHECK(DemoireNet::build(c).parameter_count() == net.parameter_count());

    auto again = DemoireNet::build(c);
    const auto a = net.state(), b = again.state();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(bitwise_equal(a[i].tensor, b[i].tensor));

    c.layer_kind = LayerKind::shapeconv;
    auto sc = DemoireNet::build(c);
    CHECK(sc.parameter_count() > net.parameter_count());
    CHECK(sc.fuse_model().parameter_count() == net.parameter_count());

    NetConfig bad;
    bad.widths = {8, 8};
    CHECK_THROWS_AS(DemoireNet::build(bad), ValidationError);
    bad.widths = {8, 0, 8};
    CHECK_THROWS_AS(DemoireNet::build(bad), ValidationError);
    bad = NetConfig{};
    bad.kernel_size = 2;
    CHECK_THROWS_AS(DemoireNet::build(bad), ValidationError);
    CHECK_THROWS_AS(parse_layer_kind("dilated"), ValidationError);
}

TEST_CASE("forward") {
    NetConfig c;
    c.widths = {4, 4, 4};
    auto net = DemoireNet::build(c);
    Rng rng(1);
    auto x = random_uniform<float>(Dims{2, 16, 12, 3}, 0, 1, rng);
    CHECK(net.forward(x).dims() == x.dims());

    // Zero weights: the global residual passes the input through.
    for (auto& [name, t] : net.parameters()) {
        for (auto& v : t.mutable_data()) v = 0;
    }
    CHECK(bitwise_equal(net.forward(x), x));
    CHECK_THROWS_AS(net.forward(random_uniform<float>(Dims{1, 10, 12, 3}, 0, 1, rng)), GeometryError);
    CHECK_THROWS_AS(net.forward(random_uniform<float>(Dims{1, 12, 12, 4}, 0, 1, rng)), ShapeError);

    // predict clamps to [0, 1].
    auto wild = DemoireNet::build(c);
    perturb(wild, rng);
    auto big = random_uniform<float>(Dims{1, 8, 8, 3}, -3, 3, rng);
    auto p = wild.predict(big);
    for (float v : p.data()) CHECK((v >= 0.0f && v <= 1.0f));
}

TEST_CASE("batch permutation equivariance") {
    NetConfig c;
    c.widths = {4, 6, 8};
    c.layer_kind = LayerKind::shapeconv;
    auto net = DemoireNet::build(c);
    Rng rng(2);
    perturb(net, rng);
    auto a = random_uniform<float>(Dims{1, 16, 16, 3}, 0, 1, rng);
    auto b = random_uniform<float>(Dims{1, 16, 16, 3}, 0, 1, rng);
    auto ab = net.forward(concat_axis0(a, b));
    auto ba = net.forward(concat_axis0(b, a));
    CHECK(bitwise_equal(split_axis0(ab, 1).first, split_axis0(ba, 1).second));
    CHECK(bitwise_equal(split_axis0(ab, 1).second, split_axis0(ba, 1).first));
    CHECK(bitwise_equal(split_axis0(ab, 1).first, net.forward(a)));
}

TEST_CASE("identity-initialised ShapeConv net equals its vanilla twin") {
    NetConfig c;
    c.seed = 17;
    auto vanilla = DemoireNet::build(c);
    c.layer_kind = LayerKind::shapeconv;
    auto shape = DemoireNet::build(c);
    Rng rng(3);
    for (int i = 0; i < 3; ++i) {
        auto x = random_uniform<float>(Dims{1, 32, 32, 3}, 0, 1, rng);
        CHECK(bitwise_equal(shape.forward(x), vanilla.forward(x)));
    }
    auto fused = shape.fuse_model();
    for (std::size_t i = 0; i < fused.layers().size(); ++i) {
        CHECK(bitwise_equal(fused.layers()[i].params.kernel, vanilla.layers()[i].params.kernel));
    }
}

TEST_CASE("fuse_model") {
    NetConfig c;
    c.widths = {4, 6, 8};
    c.layer_kind = LayerKind::shapeconv;
    auto net = DemoireNet::build(c);
    Rng rng(4);
    perturb(net, rng);
    auto fused = net.fuse_model();
    CHECK(fused.fused());
    double worst = 0;
    for (int i = 0; i < 10; ++i) {
        auto x = random_uniform<float>(Dims{1, 16, 16, 3}, 0, 1, rng);
        worst = std::max(worst, max_rel_error(fused.forward(x), net.forward(x)));
    }
    CHECK(worst <= 1e-6);
    for (const auto& t : fused.state()) {
        CHECK_FALSE(t.name.ends_with(".W_B"));
        CHECK_FALSE(t.name.ends_with(".W_S"));
    }
    CHECK(fused.state().front().name == "s0.in.K_BS");
    CHECK_THROWS_AS(fused.fuse_model(), ValidationError);
    c.layer_kind = LayerKind::vanilla;
    CHECK_THROWS_AS(DemoireNet::build(c).fuse_model(), ValidationError);
}

TEST_CASE("shape architecture adds no parameters") {
    // The dual stream reuses the same weights; the parameter list is fixed by
    // the architecture alone.
    NetConfig c;
    auto a = DemoireNet::build(c);
    auto b = DemoireNet::build(c);
    const auto pa = a.parameters(), pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        CHECK(pa[i].second.dims() == pb[i].second.dims());
    }
}

TEST_CASE("network gradients on a small instance") {
    NetConfig c;
    c.widths = {2, 2, 2};
    c.blocks_per_scale = 0;
    c.layer_kind = LayerKind::shapeconv;
    auto net = DemoireNet::build(c).cast_to<double>();
    Rng rng(5);
    for (auto& layer : net.layers()) {
        layer.params.w_base.mutable_data()[0] = rng.uniform(0.5, 1.5);
        for (auto& v : layer.params.w_shape.mutable_data()) v += rng.uniform(-0.2, 0.2);
        for (auto& v : layer.bias.mutable_data()) v = rng.uniform(-0.1, 0.1);
    }
    auto x = random_uniform<double>(Dims{1, 8, 8, 3}, 0, 1, rng);
    auto gt = random_uniform<double>(Dims{1, 8, 8, 3}, 0, 1, rng);
    std::vector<TensorD> params;
    for (auto& [name, t] : net.parameters()) params.push_back(t);
    auto r = grad_check<double>(
        [&] { return total_loss(net.forward(make_dual_batch(x).combined), gt, kDefaultLambda).total; }, params, 1e-4);
    CHECK(r.max_relative_error <= 1e-3);
    CHECK(r.unmeasurable == 0);
}

TEST_CASE("save and load") {
    NetConfig c;
    c.widths = {4, 6, 8};
    c.layer_kind = LayerKind::shapeconv;
    c.seed = 5;
    auto net = DemoireNet::build(c);
    Rng rng(6);
    perturb(net, rng);
    const auto dir = std::filesystem::temp_directory_path() / "shapemoire_test_network";
    std::filesystem::create_directories(dir);
    save_model(dir / "m.shpm", net);
    CHECK(std::filesystem::exists(dir / "m.shpm.json"));
    auto back = load_model(dir / "m.shpm");
    CHECK(back.config().layer_kind == LayerKind::shapeconv);
    CHECK(back.config().widths == c.widths);
    auto x = random_uniform<float>(Dims{1, 8, 8, 3}, 0, 1, rng);
    CHECK(bitwise_equal(back.forward(x), net.forward(x)));

    save_model(dir / "f.shpm", net.fuse_model());
    auto fb = load_model(dir / "f.shpm");
    CHECK(fb.fused());
    CHECK(bitwise_equal(fb.forward(x), net.fuse_model().forward(x)));

    auto state = net.state();
    state.pop_back();
    CHECK_THROWS_AS(DemoireNet::from_state(c, false, state), ValidationError);
    CHECK_THROWS_AS(load_model(dir / "missing.shpm"), NotFoundError);
    std::filesystem::remove_all(dir);
}
