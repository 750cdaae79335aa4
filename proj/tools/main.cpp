#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>

#include "shapemoire/bench.hpp"
#include "shapemoire/image_io.hpp"
#include "shapemoire/ops.hpp"
#include "shapemoire/parallel.hpp"
#include "shapemoire/properties.hpp"
#include "shapemoire/random.hpp"
#include "shapemoire/shape_stream.hpp"
#include "shapemoire/train.hpp"

using namespace shapemoire;

namespace {

constexpr const char* kThreadsNote =
    "Worker threads for batch-parallel convolution. Results are bitwise reproducible only for a fixed thread count.";

void print_epoch(const EpochLog& e) {
    std::fprintf(stderr, "epoch %3d  l_base %.5f  l_shape %.5f  l_total %.5f  val %.3f dB / %.4f\n", e.epoch, e.l_base,
                 e.l_shape, e.l_total, e.val_psnr, e.val_ssim);
}

int cmd_synth(const std::filesystem::path& out, std::int64_t n, std::int64_t n_val, std::int64_t size,
              std::uint64_t seed) {
    DatasetSpec spec;
    spec.n_train = n;
    spec.n_val = n_val;
    spec.size = size;
    spec.seed = seed;
    synthesize_dataset(out, spec);
    std::printf("wrote %lld train + %lld val pairs (%lldx%lld) to %s\n", static_cast<long long>(n),
                static_cast<long long>(n_val), static_cast<long long>(size), static_cast<long long>(size),
                out.string().c_str());
    return 0;
}

int cmd_train(const std::filesystem::path& config_path, double lambda, int threads, int epochs) {
    auto c = load_train_config(config_path);
    apply_env_overrides(c);
    if (lambda >= 0) c.lambda = lambda;
    if (threads > 0) c.threads = threads;
    if (epochs >= 0) c.epochs = epochs;
    if (c.ckpt_dir.empty()) throw ValidationError("config has no ckpt_dir");
    if (c.threads > 1) std::fprintf(stderr, "note: %d threads; checkpoints match only runs with the same count\n", c.threads);
    const auto r = train_to_dir(c, print_epoch);
    std::printf("%s\n", (c.ckpt_dir / "model.shpm").string().c_str());
    std::fprintf(stderr, "final val: %.3f dB, ssim %.4f over %lld images\n", r.final_val.psnr_db, r.final_val.ssim,
                 static_cast<long long>(r.final_val.n_images));
    return 0;
}

int cmd_eval(const std::filesystem::path& ckpt, const std::filesystem::path& data, const std::string& split, int threads) {
    set_num_threads(threads);
    const auto net = load_model(ckpt);
    const auto r = evaluate(net, load_split(data, split));
    nlohmann::ordered_json j;
    j["psnr"] = r.psnr_db;
    j["ssim"] = r.ssim;
    j["n_images"] = r.n_images;
    j["checkpoint"] = ckpt.string();
    j["dataset"] = (data / split).string();
    j["lpips"] = "n/a";
    std::printf("%s\n", j.dump(2).c_str());
    std::fprintf(stderr, "lpips: n/a\n");
    return 0;
}

int cmd_fuse(const std::filesystem::path& ckpt, const std::filesystem::path& out, std::uint64_t seed) {
    const auto net = load_model(ckpt);
    const auto fused = net.fuse_model();
    Rng rng(seed);
    double worst = 0;
    for (int i = 0; i < 10; ++i) {
        auto x = random_uniform<float>(Dims{1, 64, 64, 3}, 0, 1, rng);
        worst = std::max(worst, max_rel_error(fused.forward(x), net.forward(x)));
    }
    std::fprintf(stderr, "fusion probe: max rel error %.3g over 10 images (limit 1e-6)\n", worst);
    if (!(worst <= 1e-6)) {
        std::fprintf(stderr, "error: fused model disagrees with the original, not writing %s\n", out.string().c_str());
        return 1;
    }
    save_model(out, fused);
    std::printf("%s: %lld parameters (was %lld)\n", out.string().c_str(),
                static_cast<long long>(fused.parameter_count()), static_cast<long long>(net.parameter_count()));
    return 0;
}

int cmd_check() {
    int failed = 0;
    run_property_suite([&](const PropertyResult& r) {
        if (!r.passed) ++failed;
        std::printf("%s\n", format_result(r).c_str());
        std::fflush(stdout);
    });
    std::printf("%s\n", failed == 0 ? "all properties hold" : "PROPERTY FAILURES");
    return failed == 0 ? 0 : 1;
}

int cmd_bench(const std::filesystem::path& ckpt, std::int64_t n, std::int64_t size, bool unfused) {
    DemoireNet net;
    if (ckpt.empty()) {
        NetConfig c;
        c.layer_kind = LayerKind::shapeconv;
        net = DemoireNet::build(c);
    } else {
        net = load_model(ckpt);
    }
    const auto r = benchmark_latency(net, n, size, 0, unfused);
    std::printf("%s\n", r.json().c_str());
    return 0;
}

int cmd_infer(const std::filesystem::path& ckpt, const std::filesystem::path& in, const std::filesystem::path& out) {
    const auto net = load_model(ckpt);
    const auto img = read_png(in);
    const auto x = stack_images({&img});
    const Model<float> model = [&](const Tensor& t) { return net.predict(t); };
    auto y = inference(model, x);
    write_png(out, Tensor(Dims{img.dim(0), img.dim(1), 3}, std::vector<float>(y.data().begin(), y.data().end())));
    return 0;
}

int cmd_ablate(const std::filesystem::path& data, const std::vector<std::uint64_t>& seeds, int epochs,
               std::vector<std::int64_t> widths, int blocks, double lr, int threads, const std::filesystem::path& csv) {
    TrainConfig c;
    c.net.widths = std::move(widths);
    c.net.blocks_per_scale = blocks;
    c.epochs = epochs;
    c.learning_rate = lr;
    c.threads = threads;
    const auto tr = load_split(data, "train");
    const auto va = load_split(data, "val");
    auto r = run_ablation(c, tr, va, seeds, [](const std::string& cell, std::uint64_t seed, const EpochLog& e) {
        std::fprintf(stderr, "%-10s seed %llu ", cell.c_str(), static_cast<unsigned long long>(seed));
        print_epoch(e);
    });
    std::printf("%s", r.table().c_str());
    if (!csv.empty()) {
        std::ofstream f(csv);
        f << "cell,layer_kind,shape_arch,seed,val_psnr\n";
        for (const auto& cell : r.cells)
            for (std::size_t i = 0; i < cell.val_psnr.size(); ++i)
                f << cell.name << ',' << to_string(cell.layer_kind) << ',' << cell.use_shape_arch << ',' << seeds[i]
                  << ',' << cell.val_psnr[i] << '\n';
    }
    std::printf("ordering %s\n", r.ordering_holds() ? "holds" : "does NOT hold");
    return r.ordering_holds() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ShapeConv layers and dual-stream training for image demoireing"};
    app.require_subcommand(1);

    std::filesystem::path out, ckpt, data, in, config, csv;
    std::int64_t n = 400, n_val = 50, size = 64;
    std::uint64_t seed = 0;
    int threads = 1;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic paired moire dataset");
    synth->add_option("--out", out, "Output directory")->required();
    synth->add_option("--n", n, "Training pairs")->capture_default_str();
    synth->add_option("--n-val", n_val, "Validation pairs")->capture_default_str();
    synth->add_option("--size", size, "Image side in pixels (>= 32)")->capture_default_str();
    synth->add_option("--seed", seed, "Root seed")->capture_default_str();

    double lambda = -1;
    int epochs = -1, train_threads = 0;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a key = value config file");
    train_cmd->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--lambda", lambda, "Weight of the gradient-domain loss (overrides loss.lambda)");
    train_cmd->add_option("--epochs", epochs, "Overrides train.epochs");
    train_cmd->add_option("--threads", train_threads, kThreadsNote);
    train_cmd->footer("SHAPEMOIRE_SEED in the environment overrides the config seed.");

    std::string split = "val";
    auto* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset split (JSON on stdout)");
    eval->add_option("--ckpt", ckpt, "Model checkpoint")->required();
    eval->add_option("--data", data, "Dataset root")->required();
    eval->add_option("--split", split, "Split name")->capture_default_str();
    eval->add_option("--threads", threads, kThreadsNote)->capture_default_str();

    auto* fuse = app.add_subcommand("fuse", "Fold shape weights into plain kernels");
    fuse->add_option("--ckpt", ckpt, "ShapeConv checkpoint")->required();
    fuse->add_option("--out", out, "Fused checkpoint to write")->required();
    fuse->add_option("--seed", seed, "Seed for the 10 probe images")->capture_default_str();

    auto* check = app.add_subcommand("check", "Run the numerical property suite; nonzero exit on failure");

    bool unfused = false;
    std::int64_t bench_n = 1000;
    auto* bench = app.add_subcommand("bench", "Per-image latency, fused model vs vanilla twin (JSON on stdout)");
    bench->add_option("--ckpt", ckpt, "ShapeConv checkpoint (default: freshly built default net)");
    bench->add_option("--n", bench_n, "Images per model")->capture_default_str();
    bench->add_option("--size", size, "Image side")->capture_default_str();
    bench->add_flag("--unfused", unfused, "Also time the unfused training form");

    auto* infer = app.add_subcommand("infer", "Demoire a single PNG");
    infer->add_option("--ckpt", ckpt, "Model checkpoint")->required();
    infer->add_option("--in", in, "Input PNG")->required()->check(CLI::ExistingFile);
    infer->add_option("--out", out, "Output PNG")->required();

    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<std::int64_t> widths{8, 16, 32};
    int blocks = 2, abl_epochs = 30;
    double lr = 2e-3;
    auto* ablate = app.add_subcommand("ablate", "Train the four ablation cells and compare validation PSNR");
    ablate->add_option("--data", data, "Dataset root")->required();
    ablate->add_option("--seeds", seeds, "Seeds to average over")->capture_default_str();
    ablate->add_option("--epochs", abl_epochs, "Epochs per run")->capture_default_str();
    ablate->add_option("--widths", widths, "Widths at the three scales")->expected(3)->capture_default_str();
    ablate->add_option("--blocks", blocks, "Blocks per scale")->capture_default_str();
    ablate->add_option("--lr", lr, "Learning rate")->capture_default_str();
    ablate->add_option("--threads", threads, kThreadsNote)->capture_default_str();
    ablate->add_option("--csv", csv, "Write per-seed results here");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*synth) return cmd_synth(out, n, n_val, size, seed);
        if (*train_cmd) return cmd_train(config, lambda, train_threads, epochs);
        if (*eval) return cmd_eval(ckpt, data, split, threads);
        if (*fuse) return cmd_fuse(ckpt, out, seed);
        if (*check) return cmd_check();
        if (*bench) return cmd_bench(ckpt, bench_n, size, unfused);
        if (*infer) return cmd_infer(ckpt, in, out);
        if (*ablate) return cmd_ablate(data, seeds, abl_epochs, widths, blocks, lr, threads, csv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
