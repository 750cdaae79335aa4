#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "shapemoire/train.hpp"

using namespace shapemoire;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<ImagePair> tiny_set(std::uint64_t seed, int n) {
    std::vector<ImagePair> out;
    for (int i = 0; i < n; ++i) out.push_back(make_pair(seed + i, MoireParams::sample(seed + 100 + i), 32, std::to_string(i)));
    return out;
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.net.widths = {4, 4, 4};
    c.net.blocks_per_scale = 0;
    c.epochs = 2;
    c.batch_size = 2;
    return c;
}

}  // namespace

TEST_CASE("config parsing") {
    const auto c = parse_train_config(R"(# comment
seed = 7
model.layer_kind = shapeconv
model.widths = 8, 16,32
model.blocks_per_scale = 1
train.shape_arch = true
train.epochs = 3
train.learning_rate = 0.001   # trailing comment
loss.lambda = 0.25
data = data
)",
                                      "/base");
    CHECK(c.seed() == 7);
    CHECK(c.net.layer_kind == LayerKind::shapeconv);
    CHECK(c.net.widths == std::vector<std::int64_t>{8, 16, 32});
    CHECK(c.net.blocks_per_scale == 1);
    CHECK(c.use_shape_arch);
    CHECK(c.epochs == 3);
    CHECK(c.learning_rate == 0.001);
    CHECK(c.lambda == 0.25);
    CHECK(c.data == std::filesystem::path("/base/data"));
    CHECK(c.lr_schedule == LrSchedule::constant);
    CHECK(parse_train_config("train.lr_schedule = cosine").lr_schedule == LrSchedule::cosine);
    CHECK_THROWS_AS(parse_train_config("train.lr_schedule = step"), ValidationError);

    // Round trip through the printed form.
    const auto again = parse_train_config(to_config_text(c));
    CHECK(to_config_text(again) == to_config_text(c));

    CHECK_THROWS_AS(parse_train_config("train.epochz = 3"), ValidationError);
    CHECK_THROWS_AS(parse_train_config("train.epochs = many"), ValidationError);
    CHECK_THROWS_AS(parse_train_config("loss.lambda = -1"), ValidationError);
    CHECK_THROWS_AS(parse_train_config("model.layer_kind = deformable"), ValidationError);
    CHECK_THROWS_AS(load_train_config("/nonexistent/shapemoire.cfg"), NotFoundError);
}

TEST_CASE("env override") {
    auto c = parse_train_config("seed = 3");
    setenv("SHAPEMOIRE_SEED", "42", 1);
    apply_env_overrides(c);
    unsetenv("SHAPEMOIRE_SEED");
    CHECK(c.seed() == 42);
    apply_env_overrides(c);
    CHECK(c.seed() == 42);
}

TEST_CASE("adam") {
    // Minimizes sum((p - 3)^2) from 0.
    Tensor p(Dims{4}, 0.0f);
    p.set_requires_grad(true);
    Adam adam({p}, 0.1, 0.9, 0.999, 1e-8);
    for (int i = 0; i < 500; ++i) {
        auto g = p.grad_buffer();
        for (std::size_t j = 0; j < g.size(); ++j) g[j] = 2.0f * (p.data()[j] - 3.0f);
        adam.step();
        CHECK(!p.has_grad());
    }
    CHECK(adam.steps() == 500);
    for (float v : p.data()) CHECK(v == doctest::Approx(3.0).epsilon(1e-2));

    // First step moves each coordinate by about lr regardless of gradient scale.
    Tensor q(Dims{2}, 0.0f);
    q.set_requires_grad(true);
    Adam one({q}, 0.01, 0.9, 0.999, 1e-8);
    q.grad_buffer()[0] = 1000.0f;
    q.grad_buffer()[1] = -0.001f;
    one.step();
    CHECK(q.data()[0] == doctest::Approx(-0.01).epsilon(1e-4));
    CHECK(q.data()[1] == doctest::Approx(0.01).epsilon(1e-3));

    // Decay alone pulls towards zero.
    Tensor w(Dims{1}, 1.0f);
    w.set_requires_grad(true);
    Adam decayed({w}, 0.01, 0.9, 0.999, 1e-8);
    w.grad_buffer();  // zero gradient
    decayed.step({1.0});
    CHECK(w.data()[0] < 1.0f);
}

TEST_CASE("training is deterministic and lowers the loss") {
    const auto tr = tiny_set(1, 4);
    const auto va = tiny_set(50, 2);
    auto c = tiny_config();
    c.net.layer_kind = LayerKind::shapeconv;
    c.use_shape_arch = true;
    c.epochs = 3;
    const auto a = train(c, tr, va);
    const auto b = train(c, tr, va);
    REQUIRE(a.log.size() == 3);
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].l_total == b.log[i].l_total);
        CHECK(a.log[i].val_psnr == b.log[i].val_psnr);
    }
    const auto pa = a.net.parameters();
    const auto pb = b.net.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bitwise_equal(pa[i].second, pb[i].second));
    CHECK(a.log.back().l_total < a.log.front().l_total);
    CHECK(a.log.back().l_shape > 0.0);

    // The shape weights move, so the model is no longer an identity-initialized twin.
    bool moved = false;
    for (const auto& [name, t] : pa)
        if (name.ends_with(".W_B") && t.data()[0] != 1.0f) moved = true;
    CHECK(moved);

    auto bad = c;
    bad.batch_size = 0;
    CHECK_THROWS_AS(train(bad, tr, va), ValidationError);
    CHECK_THROWS_AS(train(c, {}, va), ValidationError);
}

TEST_CASE("train_to_dir writes a reproducible checkpoint") {
    const auto root = std::filesystem::temp_directory_path() / "shapemoire_test_train";
    std::filesystem::remove_all(root);
    DatasetSpec spec;
    spec.n_train = 4;
    spec.n_val = 2;
    spec.size = 32;
    synthesize_dataset(root / "data", spec);

    auto c = tiny_config();
    c.data = root / "data";
    c.ckpt_dir = root / "run1";
    train_to_dir(c);
    c.ckpt_dir = root / "run2";
    train_to_dir(c);
    CHECK(slurp(root / "run1" / "model.shpm") == slurp(root / "run2" / "model.shpm"));
    CHECK(std::filesystem::exists(root / "run1" / "model.shpm.json"));

    const auto csv = slurp(root / "run1" / "log.csv");
    CHECK(csv.rfind("epoch,l_base,l_shape,l_total,val_psnr,val_ssim\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

    const auto reloaded = load_model(root / "run1" / "model.shpm");
    const auto val = load_split(root / "data", "val");
    CHECK(evaluate(reloaded, val).n_images == 2);
    std::filesystem::remove_all(root);
}

TEST_CASE("ablation ordering") {
    AblationResult r;
    auto cell = [](std::string name, LayerKind k, bool arch, double v) {
        return AblationCell{std::move(name), k, arch, 0.0, {v}};
    };
    r.cells = {cell("baseline", LayerKind::vanilla, false, 22.0), cell("shape-arch", LayerKind::vanilla, true, 22.1),
               cell("shapeconv", LayerKind::shapeconv, false, 22.2), cell("shapemoire", LayerKind::shapeconv, true, 22.3)};
    CHECK(r.ordering_holds());
    CHECK(r.cell(true, true).name == "shapemoire");
    CHECK(r.table().find("shapemoire") != std::string::npos);

    r.cells[3].val_psnr = {22.15};  // below shapeconv-only
    CHECK_FALSE(r.ordering_holds());
    r.cells[3].val_psnr = {22.3};
    r.cells[1].val_psnr = {21.9};  // 0.1 dB below baseline
    CHECK_FALSE(r.ordering_holds());
    r.cells[1].val_psnr = {21.96};  // within 0.05 dB of baseline
    CHECK(r.ordering_holds());
    r.cells[3].val_psnr = {22.05};
    r.cells[2].val_psnr = {22.04};
    CHECK_FALSE(r.ordering_holds());  // gain over baseline under 0.1 dB
}
