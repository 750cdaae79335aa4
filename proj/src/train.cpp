#include "shapemoire/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "shapemoire/parallel.hpp"
#include "shapemoire/random.hpp"
#include "shapemoire/shape_stream.hpp"

namespace shapemoire {

void TrainConfig::validate() const {
    net.validate();
    if (epochs < 0) throw ValidationError("train.epochs must be >= 0");
    if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ValidationError("train.learning_rate must be > 0");
    if (!(lambda >= 0.0)) throw ValidationError("loss.lambda must be >= 0");
    if (!(shape_weight >= 0.0)) throw ValidationError("loss.shape_weight must be >= 0");
    if (!(weight_decay_shape >= 0.0)) throw ValidationError("train.weight_decay_shape must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ValidationError("Adam betas must lie in [0, 1)");
    }
    if (threads < 1) throw ValidationError("train.threads must be >= 1");
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end) throw ValidationError("bad value for " + key + ": '" + value + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ValidationError("bad boolean for " + key + ": '" + value + "'");
}

LrSchedule parse_schedule(const std::string& key, const std::string& value) {
    if (value == "constant") return LrSchedule::constant;
    if (value == "cosine") return LrSchedule::cosine;
    throw ValidationError("bad value for " + key + ": '" + value + "' (constant or cosine)");
}

std::vector<std::int64_t> parse_widths(const std::string& key, const std::string& value) {
    std::vector<std::int64_t> widths;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) widths.push_back(parse_number<std::int64_t>(key, trim(item)));
    return widths;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
    std::filesystem::path p(value);
    return p.is_relative() && !base.empty() ? base / p : p;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text, const std::filesystem::path& base_dir) {
    TrainConfig c;
    std::stringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        const auto key = trim(std::string_view(line).substr(0, eq));
        const auto value = trim(std::string_view(line).substr(eq + 1));
        if (key == "seed") c.net.seed = parse_number<std::uint64_t>(key, value);
        else if (key == "data") c.data = resolve(base_dir, value);
        else if (key == "ckpt_dir") c.ckpt_dir = resolve(base_dir, value);
        else if (key == "model.layer_kind") c.net.layer_kind = parse_layer_kind(value);
        else if (key == "model.widths") c.net.widths = parse_widths(key, value);
        else if (key == "model.blocks_per_scale") c.net.blocks_per_scale = parse_number<int>(key, value);
        else if (key == "model.kernel_size") c.net.kernel_size = parse_number<int>(key, value);
        else if (key == "train.shape_arch") c.use_shape_arch = parse_bool(key, value);
        else if (key == "train.epochs") c.epochs = parse_number<int>(key, value);
        else if (key == "train.batch_size") c.batch_size = parse_number<int>(key, value);
        else if (key == "train.learning_rate") c.learning_rate = parse_number<double>(key, value);
        else if (key == "train.lr_schedule") c.lr_schedule = parse_schedule(key, value);
        else if (key == "train.weight_decay_shape") c.weight_decay_shape = parse_number<double>(key, value);
        else if (key == "train.threads") c.threads = parse_number<int>(key, value);
        else if (key == "loss.lambda") c.lambda = parse_number<double>(key, value);
        else if (key == "loss.shape_weight") c.shape_weight = parse_number<double>(key, value);
        else throw ValidationError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("config not found: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str(), path.parent_path());
}

void apply_env_overrides(TrainConfig& config) {
    if (const char* s = std::getenv("SHAPEMOIRE_SEED"); s && *s) {
        config.net.seed = parse_number<std::uint64_t>("SHAPEMOIRE_SEED", trim(s));
    }
}

std::string to_config_text(const TrainConfig& c) {
    std::ostringstream out;
    out.precision(17);
    out << "seed = " << c.net.seed << '\n';
    if (!c.data.empty()) out << "data = " << c.data.string() << '\n';
    if (!c.ckpt_dir.empty()) out << "ckpt_dir = " << c.ckpt_dir.string() << '\n';
    out << "model.layer_kind = " << to_string(c.net.layer_kind) << '\n';
    out << "model.widths = ";
    for (std::size_t i = 0; i < c.net.widths.size(); ++i) out << (i ? "," : "") << c.net.widths[i];
    out << '\n';
    out << "model.blocks_per_scale = " << c.net.blocks_per_scale << '\n';
    out << "model.kernel_size = " << c.net.kernel_size << '\n';
    out << "train.shape_arch = " << (c.use_shape_arch ? "true" : "false") << '\n';
    out << "train.epochs = " << c.epochs << '\n';
    out << "train.batch_size = " << c.batch_size << '\n';
    out << "train.learning_rate = " << c.learning_rate << '\n';
    out << "train.lr_schedule = " << (c.lr_schedule == LrSchedule::cosine ? "cosine" : "constant") << '\n';
    out << "train.weight_decay_shape = " << c.weight_decay_shape << '\n';
    out << "train.threads = " << c.threads << '\n';
    out << "loss.lambda = " << c.lambda << '\n';
    out << "loss.shape_weight = " << c.shape_weight << '\n';
    return out.str();
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
        v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }
}

void Adam::step(const std::vector<double>& decay) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) continue;
        const double wd = i < decay.size() ? decay[i] : 0.0;
        auto g = p.grad();
        auto w = p.mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = static_cast<double>(g[j]) + wd * w[j];
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
            const double update = lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
            w[j] = static_cast<float>(w[j] - update);
        }
        p.clear_grad();
    }
}

namespace {

struct Batch {
    Tensor moire, clean;
};

Batch make_batch(const std::vector<ImagePair>& pairs, const std::vector<std::size_t>& order, std::size_t begin,
                 std::size_t end) {
    std::vector<const Tensor*> moire, clean;
    for (auto i = begin; i < end; ++i) {
        moire.push_back(&pairs[order[i]].moire);
        clean.push_back(&pairs[order[i]].clean);
    }
    return {stack_images(moire), stack_images(clean)};
}

class ThreadScope {
public:
    explicit ThreadScope(int n) : previous_(num_threads()) { set_num_threads(n); }
    ~ThreadScope() { set_num_threads(previous_); }

private:
    int previous_;
};

}  // namespace

MetricReport evaluate(const DemoireNet& net, const std::vector<ImagePair>& pairs, int batch_size) {
    MetricAccumulator acc;
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto bs = static_cast<std::size_t>(std::max(batch_size, 1));
    for (std::size_t b = 0; b < pairs.size(); b += bs) {
        auto batch = make_batch(pairs, order, b, std::min(pairs.size(), b + bs));
        acc.add(net.predict(batch.moire), batch.clean);
    }
    return acc.report();
}

TrainResult train(const TrainConfig& config, const std::vector<ImagePair>& train_set,
                  const std::vector<ImagePair>& val_set, const EpochCallback& on_epoch) {
    config.validate();
    if (train_set.empty()) throw ValidationError("training set is empty");
    ThreadScope threads(config.threads);
    retain_heap_memory();

    TrainResult result{DemoireNet::build(config.net), {}, {}};
    auto& net = result.net;
    std::vector<Tensor> params;
    std::vector<double> decay;
    for (auto& [name, t] : net.parameters()) {
        t.set_requires_grad(true);
        params.push_back(t);
        const bool shape_weight = name.ends_with(".W_B") || name.ends_with(".W_S");
        decay.push_back(shape_weight ? config.weight_decay_shape : 0.0);
    }
    Adam adam(params, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps);

    // Shuffling draws from its own stream so it is independent of init.
    Rng shuffle_rng(config.net.seed ^ 0x5348504D5348504Dull);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto bs = static_cast<std::size_t>(config.batch_size);
    const double total_steps = static_cast<double>(config.epochs) * static_cast<double>((order.size() + bs - 1) / bs);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        EpochLog log;
        log.epoch = epoch;
        int batches = 0;
        for (std::size_t b = 0; b < order.size(); b += bs) {
            auto batch = make_batch(train_set, order, b, std::min(order.size(), b + bs));
            LossReport report;
            {
                GradTape<float> tape;
                if (config.use_shape_arch) {
                    auto dual = make_dual_batch(batch.moire);
                    auto loss = total_loss(net.forward(dual.combined), batch.clean, config.lambda, config.shape_weight);
                    tape.backward(loss.total);
                    report = loss.report;
                } else {
                    auto loss = base_loss(net.forward(batch.moire), batch.clean, config.lambda);
                    tape.backward(loss.total);
                    report = loss.report;
                }
            }
            if (config.lr_schedule == LrSchedule::cosine) {
                const auto t = static_cast<double>(adam.steps());
                adam.set_learning_rate(config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t / total_steps)));
            }
            adam.step(decay);
            log.l_base += report.l_base;
            log.l_shape += report.l_shape;
            log.l_total += report.l_total;
            ++batches;
        }
        log.l_base /= batches;
        log.l_shape /= batches;
        log.l_total /= batches;
        if (!val_set.empty()) {
            const auto m = evaluate(net, val_set, config.batch_size);
            log.val_psnr = m.psnr_db;
            log.val_ssim = m.ssim;
        }
        if (!std::isfinite(log.l_total)) throw NumericError("training diverged at epoch " + std::to_string(epoch));
        result.log.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    for (auto& p : params) p.set_requires_grad(false);
    if (!val_set.empty()) result.final_val = evaluate(net, val_set, config.batch_size);
    return result;
}

void write_log_csv(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,l_base,l_shape,l_total,val_psnr,val_ssim\n";
    char line[256];
    for (const auto& e : log) {
        std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g,%.6f,%.6f\n", e.epoch, e.l_base, e.l_shape, e.l_total,
                      e.val_psnr, e.val_ssim);
        out << line;
    }
}

TrainResult train_to_dir(const TrainConfig& config, const EpochCallback& on_epoch) {
    if (config.data.empty()) throw ValidationError("config has no data path");
    if (config.ckpt_dir.empty()) throw ValidationError("config has no ckpt_dir");
    const auto train_set = load_split(config.data, "train");
    std::vector<ImagePair> val_set;
    if (std::filesystem::is_directory(config.data / "val")) val_set = load_split(config.data, "val");
    auto result = train(config, train_set, val_set, on_epoch);
    std::filesystem::create_directories(config.ckpt_dir);
    save_model(config.ckpt_dir / "model.shpm", result.net);
    write_log_csv(config.ckpt_dir / "log.csv", result.log);
    std::ofstream(config.ckpt_dir / "train.cfg") << to_config_text(config);
    return result;
}

double AblationCell::mean_psnr() const {
    if (val_psnr.empty()) return 0.0;
    return std::accumulate(val_psnr.begin(), val_psnr.end(), 0.0) / static_cast<double>(val_psnr.size());
}

const AblationCell& AblationResult::cell(bool shapeconv, bool shape_arch) const {
    for (const auto& c : cells) {
        if ((c.layer_kind == LayerKind::shapeconv) == shapeconv && c.use_shape_arch == shape_arch) return c;
    }
    throw ValidationError("ablation cell missing");
}

bool AblationResult::ordering_holds() const {
    const double base = cell(false, false).mean_psnr();
    const double arch = cell(false, true).mean_psnr();
    const double conv = cell(true, false).mean_psnr();
    const double both = cell(true, true).mean_psnr();
    return both >= conv && both >= arch && arch >= base - tolerance_db && both - base >= min_gain_db;
}

std::string AblationResult::table() const {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-18s %-9s %-10s %12s %12s  %s\n", "cell", "ShapeConv", "ShapeArch",
                  "val_psnr_db", "reference", "per-seed");
    out << line;
    for (const auto& c : cells) {
        std::string seeds;
        for (double v : c.val_psnr) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%s%.3f", seeds.empty() ? "" : " ", v);
            seeds += buf;
        }
        std::snprintf(line, sizeof line, "%-18s %-9s %-10s %12.3f %12.3f  %s\n", c.name.c_str(),
                      c.layer_kind == LayerKind::shapeconv ? "yes" : "no", c.use_shape_arch ? "yes" : "no",
                      c.mean_psnr(), c.reference_psnr, seeds.c_str());
        out << line;
    }
    out << "reference column: full-scale values, for orientation only; not comparable with desk-scale runs\n";
    return out.str();
}

AblationResult run_ablation(const TrainConfig& base, const std::vector<ImagePair>& train_set,
                            const std::vector<ImagePair>& val_set, const std::vector<std::uint64_t>& seeds,
                            const AblationProgress& progress) {
    AblationResult result;
    result.cells = {
        {"baseline", LayerKind::vanilla, false, 22.253, {}},
        {"shape-arch", LayerKind::vanilla, true, 22.315, {}},
        {"shapeconv", LayerKind::shapeconv, false, 22.469, {}},
        {"shapemoire", LayerKind::shapeconv, true, 22.597, {}},
    };
    for (auto seed : seeds) {
        for (auto& cell : result.cells) {
            auto config = base;
            config.net.layer_kind = cell.layer_kind;
            config.net.seed = seed;
            config.use_shape_arch = cell.use_shape_arch;
            EpochCallback cb;
            if (progress) cb = [&](const EpochLog& e) { progress(cell.name, seed, e); };
            cell.val_psnr.push_back(train(config, train_set, val_set, cb).final_val.psnr_db);
        }
    }
    return result;
}

}  // namespace shapemoire
