#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "shapemoire/checkpoint.hpp"
#include "shapemoire/shapeconv.hpp"
#include "shapemoire/tensor.hpp"

namespace shapemoire {

enum class LayerKind { vanilla, shapeconv };

std::string to_string(LayerKind kind);
LayerKind parse_layer_kind(const std::string& text);

struct NetConfig {
    // Channel width at full, 1/2 and 1/4 resolution.
    std::vector<std::int64_t> widths{16, 32, 64};
    int blocks_per_scale = 2;
    int kernel_size = 3;
    LayerKind layer_kind = LayerKind::vanilla;
    std::uint64_t seed = 0;
    // Std multiplier for hidden kernels (He-style for ReLU) and for the
    // residual heads, which start small so the net begins near identity.
    double hidden_init_scale = 1.4142135623730951;
    double head_init_scale = 0.1;

    void validate() const;
};

template <class Real>
struct BasicConvLayer {
    std::string name;
    BasicShapeConvParams<Real> params;  // w_base / w_shape undefined unless shape_weights
    BasicTensor<Real> bias;             // [Cout]
    bool shape_weights = false;
    bool relu = true;

    // K_BS for ShapeConv layers, K otherwise. Differentiable.
    BasicTensor<Real> effective_kernel() const;
    BasicTensor<Real> forward(const BasicTensor<Real>& x) const;
};

/// Multi-scale residual demoiréing network.
///
/// Three scales (full, 1/2, 1/4 via 2x average pooling), each an input conv
/// plus `blocks_per_scale` conv+ReLU blocks, and a 3-channel residual head.
/// Heads are upsampled to full resolution and summed with the input image.
/// Every op acts per sample, so batch rows never interact.
template <class Real>
class BasicDemoireNet {
public:
    static BasicDemoireNet build(const NetConfig& config);

    // Raw prediction; no output clamp, so the shape stream can go negative.
    BasicTensor<Real> forward(const BasicTensor<Real>& x) const;
    // forward() clamped to [0, 1], the deployed restoration.
    BasicTensor<Real> predict(const BasicTensor<Real>& x) const;

    // Named handles to every trainable tensor, in a fixed order.
    std::vector<std::pair<std::string, BasicTensor<Real>>> parameters() const;
    std::int64_t parameter_count() const;

    // Replaces every ShapeConv layer by a vanilla layer holding K_BS.
    BasicDemoireNet fuse_model() const;

    BasicDemoireNet clone() const;

    const NetConfig& config() const { return config_; }
    bool fused() const { return fused_; }
    const std::vector<BasicConvLayer<Real>>& layers() const { return layers_; }
    std::vector<BasicConvLayer<Real>>& layers() { return layers_; }

    // Checkpoint tensors: "<layer>.K" (or ".K_BS" when fused), ".bias",
    // and ".W_B"/".W_S" for unfused ShapeConv layers.
    std::vector<NamedTensor> state() const;
    static BasicDemoireNet from_state(const NetConfig& config, bool fused, const std::vector<NamedTensor>& tensors);

    template <class To>
    BasicDemoireNet<To> cast_to() const;

private:
    template <class>
    friend class BasicDemoireNet;

    NetConfig config_;
    bool fused_ = false;
    std::vector<BasicConvLayer<Real>> layers_;
};

using DemoireNet = BasicDemoireNet<float>;

// Writes `<path>` (SHPM) and `<path>.json` (architecture sidecar).
void save_model(const std::filesystem::path& path, const DemoireNet& net);
DemoireNet load_model(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

}  // namespace shapemoire
