#include "shapemoire/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <json.hpp>

#include "shapemoire/image_io.hpp"
#include "shapemoire/random.hpp"

namespace shapemoire {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream, std::uint64_t index) {
    return splitmix64(splitmix64(splitmix64(root) ^ stream) ^ index);
}

std::string pair_id(std::int64_t index) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%06lld", static_cast<long long>(index));
    return buf;
}

nlohmann::ordered_json to_json(const MoireParams& p) {
    nlohmann::ordered_json j;
    j["f1"] = p.f1;
    j["f2"] = p.f2;
    j["theta1"] = p.theta1;
    j["theta2"] = p.theta2;
    j["phase1"] = p.phase1;
    j["phase2"] = p.phase2;
    j["amplitude"] = p.amplitude;
    j["gamma"] = p.gamma;
    j["additive"] = p.additive;
    j["seed"] = p.seed;
    return j;
}

}  // namespace

MoireParams MoireParams::sample(std::uint64_t seed) {
    Rng rng(seed);
    MoireParams p;
    p.seed = seed;
    // Spread the channels over disjoint frequency bands so no two channel
    // patterns are scaled copies of each other.
    std::array<int, 3> band{0, 1, 2};
    for (int i = 2; i > 0; --i) std::swap(band[static_cast<std::size_t>(i)], band[rng.below(static_cast<std::uint64_t>(i + 1))]);
    for (std::size_t c = 0; c < 3; ++c) {
        const double lo = 0.06 + 0.08 * band[c];
        p.f1[c] = rng.uniform(lo, lo + 0.08);
        p.f2[c] = rng.uniform(lo, lo + 0.08);
        p.theta1[c] = rng.uniform(0.0, std::numbers::pi);
        p.theta2[c] = p.theta1[c] + rng.uniform(0.2, 1.2);
        p.phase1[c] = rng.uniform(0.0, kTwoPi);
        p.phase2[c] = rng.uniform(0.0, kTwoPi);
        p.amplitude[c] = rng.uniform(0.2, 0.4);
    }
    p.gamma = rng.uniform(0.7, 1.3);
    p.additive = 0.5;
    return p;
}

void MoireParams::validate() const {
    for (std::size_t c = 0; c < 3; ++c) {
        if (!(f1[c] > 0.0 && f1[c] < 0.5 && f2[c] > 0.0 && f2[c] < 0.5)) {
            throw ValidationError("moire frequencies must lie in (0, 0.5) cycles/pixel");
        }
        if (!(amplitude[c] >= 0.0 && amplitude[c] <= 0.5)) {
            throw ValidationError("moire amplitudes must lie in [0, 0.5]");
        }
    }
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ValidationError("moire gamma must be positive");
    if (!(additive >= 0.0) || !std::isfinite(additive)) throw ValidationError("moire additive weight must be >= 0");
}

Tensor gen_clean(std::uint64_t seed, std::int64_t height, std::int64_t width) {
    if (height < 32 || width < 32) throw ValidationError("gen_clean needs H, W >= 32");
    Rng rng(seed);
    Tensor img(Dims{height, width, 3});
    auto d = img.mutable_data();

    struct Wave {
        double amp, fx, fy, phase;
    };
    for (std::int64_t c = 0; c < 3; ++c) {
        const double base = rng.uniform(0.25, 0.75);
        std::array<Wave, 3> waves{};
        for (auto& w : waves) {
            w = {rng.uniform(0.04, 0.15), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(0.0, kTwoPi)};
        }
        for (std::int64_t y = 0; y < height; ++y) {
            for (std::int64_t x = 0; x < width; ++x) {
                double v = base;
                for (const auto& w : waves) {
                    v += w.amp * std::sin(kTwoPi * (w.fx * x / width + w.fy * y / height) + w.phase);
                }
                d[(y * width + x) * 3 + c] = static_cast<float>(v);
            }
        }
    }

    const auto shapes = 2 + static_cast<int>(rng.below(4));
    for (int s = 0; s < shapes; ++s) {
        const bool disk = rng.uniform() < 0.5;
        const double cy = rng.uniform(0.0, static_cast<double>(height));
        const double cx = rng.uniform(0.0, static_cast<double>(width));
        const double ry = rng.uniform(0.08, 0.3) * height;
        const double rx = disk ? ry : rng.uniform(0.08, 0.3) * width;
        const std::array<double, 3> color{rng.uniform(), rng.uniform(), rng.uniform()};
        for (std::int64_t y = 0; y < height; ++y) {
            for (std::int64_t x = 0; x < width; ++x) {
                const double dy = (y - cy) / ry;
                const double dx = (x - cx) / rx;
                const bool inside = disk ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
                if (!inside) continue;
                for (std::size_t c = 0; c < 3; ++c) d[(y * width + x) * 3 + c] = static_cast<float>(color[c]);
            }
        }
    }
    for (auto& v : d) v = std::clamp(v, 0.0f, 1.0f);
    return img;
}

Tensor apply_moire(const Tensor& clean, const MoireParams& params) {
    params.validate();
    if (!clean.defined() || clean.rank() != 3 || clean.dim(2) != 3) {
        throw ShapeError("apply_moire expects [H, W, 3], got " + dims_to_string(clean.dims()));
    }
    const auto h = clean.dim(0), w = clean.dim(1);
    Tensor out(clean.dims());
    auto src = clean.data();
    auto dst = out.mutable_data();
    for (std::size_t c = 0; c < 3; ++c) {
        const double a = params.amplitude[c];
        const double c1 = std::cos(params.theta1[c]), s1 = std::sin(params.theta1[c]);
        const double c2 = std::cos(params.theta2[c]), s2 = std::sin(params.theta2[c]);
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
                const auto i = static_cast<std::size_t>((y * w + x) * 3) + c;
                if (a == 0.0) {
                    dst[i] = src[i];
                    continue;
                }
                const double u1 = x * c1 + y * s1;
                const double u2 = x * c2 + y * s2;
                const double v = std::cos(kTwoPi * params.f1[c] * u1 + params.phase1[c]) *
                                 std::cos(kTwoPi * params.f2[c] * u2 + params.phase2[c]);
                const double m = std::copysign(std::pow(std::abs(v), params.gamma), v);
                const double p = src[i];
                const double value = p * (1.0 - a) + p * a * (1.0 + m) + params.additive * a * m;
                dst[i] = static_cast<float>(std::clamp(value, 0.0, 1.0));
            }
        }
    }
    return out;
}

ImagePair make_pair(std::uint64_t clean_seed, const MoireParams& params, std::int64_t size, std::string id) {
    auto clean = gen_clean(clean_seed, size, size);
    auto moire = apply_moire(clean, params);
    return {std::move(clean), std::move(moire), std::move(id)};
}

void write_pair(const std::filesystem::path& dir, const ImagePair& pair) {
    if (pair.clean.dims() != pair.moire.dims()) throw ValidationError("write_pair: clean/moire dims differ");
    std::filesystem::create_directories(dir);
    write_png(dir / (pair.id + "_gt.png"), pair.clean);
    write_png(dir / (pair.id + "_moire.png"), pair.moire);
}

ImagePair read_pair(const std::filesystem::path& dir, const std::string& id) {
    ImagePair pair;
    pair.id = id;
    pair.clean = read_png(dir / (id + "_gt.png"));
    pair.moire = read_png(dir / (id + "_moire.png"));
    if (pair.clean.dims() != pair.moire.dims()) {
        throw ValidationError("pair " + id + ": gt " + dims_to_string(pair.clean.dims()) + " vs moire " +
                              dims_to_string(pair.moire.dims()));
    }
    return pair;
}

namespace {

Tensor crop(const Tensor& image, std::int64_t y, std::int64_t x, std::int64_t size) {
    const auto w = image.dim(1), c = image.dim(2);
    Tensor out(Dims{size, size, c});
    auto src = image.data();
    auto dst = out.mutable_data();
    for (std::int64_t i = 0; i < size; ++i) {
        std::copy_n(src.begin() + ((y + i) * w + x) * c, size * c, dst.begin() + i * size * c);
    }
    return out;
}

}  // namespace

std::vector<Patch> sample_patches(const ImagePair& pair, std::int64_t size, std::int64_t n, std::uint64_t seed) {
    const auto h = pair.clean.dim(0), w = pair.clean.dim(1);
    if (size <= 0 || size > h || size > w) {
        throw ValidationError("sample_patches: crop size " + std::to_string(size) + " does not fit " +
                              dims_to_string(pair.clean.dims()));
    }
    if (n <= 0) return {};
    if (size == h && size == w) return {{pair.clean.clone(), pair.moire.clone(), 0, 0}};
    Rng rng(seed);
    std::vector<Patch> patches;
    patches.reserve(static_cast<std::size_t>(n));
    for (std::int64_t k = 0; k < n; ++k) {
        const auto y = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(h - size + 1)));
        const auto x = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(w - size + 1)));
        patches.push_back({crop(pair.clean, y, x, size), crop(pair.moire, y, x, size), y, x});
    }
    return patches;
}

void synthesize_dataset(const std::filesystem::path& root, const DatasetSpec& spec) {
    if (spec.n_train < 0 || spec.n_val < 0) throw ValidationError("dataset split sizes must be >= 0");
    nlohmann::ordered_json manifest;
    manifest["version"] = 1;
    manifest["seed"] = spec.seed;
    manifest["size"] = spec.size;
    const std::array<std::pair<const char*, std::int64_t>, 2> splits{{{"train", spec.n_train}, {"val", spec.n_val}}};
    for (std::size_t s = 0; s < splits.size(); ++s) {
        const auto& [split, count] = splits[s];
        auto entries = nlohmann::ordered_json::array();
        for (std::int64_t i = 0; i < count; ++i) {
            const auto clean_seed = derive_seed(spec.seed, 2 * s, static_cast<std::uint64_t>(i));
            const auto params = MoireParams::sample(derive_seed(spec.seed, 2 * s + 1, static_cast<std::uint64_t>(i)));
            const auto id = pair_id(i);
            write_pair(root / split, make_pair(clean_seed, params, spec.size, id));
            nlohmann::ordered_json e;
            e["id"] = id;
            e["clean_seed"] = clean_seed;
            e["moire"] = to_json(params);
            entries.push_back(std::move(e));
        }
        manifest["splits"][split] = std::move(entries);
    }
    std::filesystem::create_directories(root);
    std::ofstream out(root / "manifest.json");
    if (!out) throw IoError("cannot write " + (root / "manifest.json").string());
    out << manifest.dump(2) << '\n';
}

std::vector<std::string> list_split(const std::filesystem::path& root, const std::string& split) {
    const auto manifest_path = root / "manifest.json";
    std::vector<std::string> ids;
    if (std::filesystem::exists(manifest_path)) {
        std::ifstream in(manifest_path);
        try {
            const auto j = nlohmann::json::parse(in);
            const auto& splits = j.at("splits");
            if (!splits.contains(split)) throw NotFoundError("split '" + split + "' not in " + manifest_path.string());
            for (const auto& e : splits.at(split)) ids.push_back(e.at("id").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("bad manifest " + manifest_path.string() + ": " + e.what());
        }
        return ids;
    }
    const auto dir = root / split;
    if (!std::filesystem::is_directory(dir)) throw NotFoundError("split directory not found: " + dir.string());
    const std::string suffix = "_gt.png";
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.size() > suffix.size() && name.ends_with(suffix)) ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<ImagePair> load_split(const std::filesystem::path& root, const std::string& split) {
    std::vector<ImagePair> pairs;
    for (const auto& id : list_split(root, split)) pairs.push_back(read_pair(root / split, id));
    return pairs;
}

Tensor stack_images(const std::vector<const Tensor*>& images) {
    if (images.empty()) throw ShapeError("stack_images: no images");
    const auto& first = images.front()->dims();
    std::vector<float> values;
    values.reserve(static_cast<std::size_t>(images.size() * images.front()->numel()));
    for (const auto* img : images) {
        if (img->dims() != first) throw ShapeError("stack_images: mixed dims");
        values.insert(values.end(), img->data().begin(), img->data().end());
    }
    Dims dims{static_cast<std::int64_t>(images.size())};
    dims.insert(dims.end(), first.begin(), first.end());
    return Tensor(dims, std::move(values));
}

}  // namespace shapemoire
