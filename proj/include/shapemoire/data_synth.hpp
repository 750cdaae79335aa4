#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "shapemoire/tensor.hpp"

namespace shapemoire {

struct ImagePair {
    Tensor clean;  // [H, W, 3] in [0, 1]
    Tensor moire;  // same dims
    std::string id;
};

/// Two-grating interference model, one parameter set per RGB channel.
///
/// For channel c, with u_k = x cos(theta_k) + y sin(theta_k) in pixels,
///   v = cos(2 pi f1 u1 + phase1) * cos(2 pi f2 u2 + phase2)
///   m = sign(v) |v|^gamma
///   moire = clamp(clean (1 - a) + clean a (1 + m) + additive a m, 0, 1)
struct MoireParams {
    std::array<double, 3> f1{}, f2{};          // cycles / pixel, in (0, 0.5)
    std::array<double, 3> theta1{}, theta2{};  // radians
    std::array<double, 3> phase1{}, phase2{};
    std::array<double, 3> amplitude{};          // [0, 0.5]; 0 disables a channel
    double gamma = 1.0;
    double additive = 0.5;
    std::uint64_t seed = 0;

    // Default distribution: distinct frequencies and orientations per channel.
    static MoireParams sample(std::uint64_t seed);
    // Throws ValidationError on out-of-range values.
    void validate() const;
};

// Smooth gradients plus a few flat-coloured shapes. H, W >= 32.
Tensor gen_clean(std::uint64_t seed, std::int64_t height, std::int64_t width);

Tensor apply_moire(const Tensor& clean, const MoireParams& params);

ImagePair make_pair(std::uint64_t clean_seed, const MoireParams& params, std::int64_t size, std::string id);

// `<dir>/<id>_gt.png` and `<dir>/<id>_moire.png`.
void write_pair(const std::filesystem::path& dir, const ImagePair& pair);
ImagePair read_pair(const std::filesystem::path& dir, const std::string& id);

struct Patch {
    Tensor clean;
    Tensor moire;
    std::int64_t y = 0, x = 0;
};

// n co-located crops of size x size. A crop covering the whole image has a
// single possible position, so exactly one crop is returned.
std::vector<Patch> sample_patches(const ImagePair& pair, std::int64_t size, std::int64_t n, std::uint64_t seed);

// Dataset layout: <root>/<split>/<id>_{gt,moire}.png plus <root>/manifest.json
// listing every id with its generation parameters.
struct DatasetSpec {
    std::int64_t n_train = 400;
    std::int64_t n_val = 50;
    std::int64_t size = 64;
    std::uint64_t seed = 0;
};

void synthesize_dataset(const std::filesystem::path& root, const DatasetSpec& spec);
std::vector<std::string> list_split(const std::filesystem::path& root, const std::string& split);
std::vector<ImagePair> load_split(const std::filesystem::path& root, const std::string& split);

// Stacks [H, W, 3] images into [N, H, W, 3].
Tensor stack_images(const std::vector<const Tensor*>& images);

}  // namespace shapemoire
