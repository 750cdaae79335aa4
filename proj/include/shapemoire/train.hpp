#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "shapemoire/data_synth.hpp"
#include "shapemoire/metrics.hpp"
#include "shapemoire/network.hpp"

namespace shapemoire {

enum class LrSchedule { constant, cosine };

struct TrainConfig {
    NetConfig net;               // net.layer_kind and net.seed are part of the run
    bool use_shape_arch = false;
    int epochs = 30;
    int batch_size = 16;
    double learning_rate = 2e-3;
    // cosine: per-step half-cosine from learning_rate down to 0.
    LrSchedule lr_schedule = LrSchedule::constant;
    double lambda = 0.1;
    double shape_weight = 1.0;
    // L2 decay on W_B / W_S only, pulling towards 0. Off by default.
    double weight_decay_shape = 0.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int threads = 1;
    std::filesystem::path data;      // dataset root with train/ and val/
    std::filesystem::path ckpt_dir;  // model.shpm, model.shpm.json, log.csv

    std::uint64_t seed() const { return net.seed; }
    void validate() const;
};

// Flat `key = value` lines, '#' starts a comment. Keys:
//   seed, data, ckpt_dir,
//   model.layer_kind, model.widths (comma list), model.blocks_per_scale, model.kernel_size,
//   train.shape_arch, train.epochs, train.batch_size, train.learning_rate, train.lr_schedule,
//   train.weight_decay_shape, train.threads, loss.lambda, loss.shape_weight
// Unknown keys are rejected. Relative paths resolve against `base_dir`.
TrainConfig parse_train_config(const std::string& text, const std::filesystem::path& base_dir = {});
TrainConfig load_train_config(const std::filesystem::path& path);
// SHAPEMOIRE_SEED, when set, replaces the configured seed.
void apply_env_overrides(TrainConfig& config);
std::string to_config_text(const TrainConfig& config);

class Adam {
public:
    Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps);

    // Applies one update from the accumulated grads, then clears them.
    // decay[i] adds decay[i] * p to param i's gradient first.
    void step(const std::vector<double>& decay = {});
    std::int64_t steps() const { return t_; }
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
};

struct EpochLog {
    int epoch = 0;
    double l_base = 0;  // means over the epoch's batches
    double l_shape = 0;
    double l_total = 0;
    double val_psnr = 0;
    double val_ssim = 0;
};

struct TrainResult {
    DemoireNet net;
    std::vector<EpochLog> log;
    MetricReport final_val;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Deterministic for fixed config, data and thread count.
TrainResult train(const TrainConfig& config, const std::vector<ImagePair>& train_set,
                  const std::vector<ImagePair>& val_set, const EpochCallback& on_epoch = {});

// Loads config.data, trains, writes model + sidecar + log.csv into config.ckpt_dir.
TrainResult train_to_dir(const TrainConfig& config, const EpochCallback& on_epoch = {});

// Clamped predictions scored per image.
MetricReport evaluate(const DemoireNet& net, const std::vector<ImagePair>& pairs, int batch_size = 16);

void write_log_csv(const std::filesystem::path& path, const std::vector<EpochLog>& log);

// Four cells: (vanilla|shapeconv) x (without|with the shape stream).
struct AblationCell {
    std::string name;
    LayerKind layer_kind;
    bool use_shape_arch;
    double reference_psnr;  // full-scale value, for display only
    std::vector<double> val_psnr;  // one per seed
    double mean_psnr() const;
};

struct AblationResult {
    std::vector<AblationCell> cells;  // baseline, shape-arch only, shapeconv only, both
    double tolerance_db = 0.05;
    double min_gain_db = 0.1;

    const AblationCell& cell(bool shapeconv, bool shape_arch) const;
    // both >= shapeconv-only, both >= shape-arch-only >= baseline - tol, both - baseline >= gain.
    bool ordering_holds() const;
    std::string table() const;
};

using AblationProgress = std::function<void(const std::string& cell, std::uint64_t seed, const EpochLog&)>;

AblationResult run_ablation(const TrainConfig& base, const std::vector<ImagePair>& train_set,
                            const std::vector<ImagePair>& val_set, const std::vector<std::uint64_t>& seeds,
                            const AblationProgress& progress = {});

}  // namespace shapemoire
