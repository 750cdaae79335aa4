#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

// Numerical property checks shared by `shapemoire check` and the acceptance
// binary. Each returns the worst measured value next to its threshold.
namespace shapemoire {

struct PropertyResult {
    std::string name;
    bool passed = false;
    double measured = 0;
    double threshold = 0;
    std::string detail;
    double seconds = 0;
};

// forward_patch vs forward_kernel over random geometries
// (kernel 1-5, Cin/Cout 1-8, stride 1-2, pad 0-2). Max relative error.
PropertyResult check_formulation_equivalence(int configs = 100, std::uint64_t seed = 0, double tol = 1e-5);

// conv2d(fuse(p), x) vs forward_kernel(p, x) for random single layers.
PropertyResult check_layer_fusion(int configs = 20, int probes = 20, std::uint64_t seed = 9, double tol = 1e-6);

// Random-weight ShapeConv net vs its fused form on `probes` images, plus
// fused parameter count == vanilla twin's.
PropertyResult check_network_fusion(int probes = 10, std::uint64_t seed = 0, double tol = 1e-6);

// Identity-initialised ShapeConv net vs vanilla twin, bitwise, on `probes` inputs.
PropertyResult check_identity_init(int probes = 10, std::uint64_t seed = 0);

// Finite-difference checks (double precision) of K, W_B, W_S for a single
// ShapeConv layer and of every parameter of a two-layer ShapeConv model
// trained with the dual-stream loss.
PropertyResult check_gradients(int seeds = 20, std::uint64_t seed = 0, double tol = 1e-3);

// Gradient checks of the basic differentiable ops.
PropertyResult check_op_gradients(int seeds = 100, std::uint64_t seed = 0, double tol = 1e-3);

// inference(model, x) vs first half of model(dual batch).
PropertyResult check_stream_independence(int seeds = 20, std::uint64_t seed = 0, double tol = 1e-6);

// |per-channel mean| of shape-transformed random images.
PropertyResult check_shape_transform_zero_mean(int images = 100, std::uint64_t seed = 0, double tol = 1e-6);

// Fixed PSNR / SSIM reference cases.
PropertyResult check_metric_sanity();

// The property suite run by `shapemoire check`.
std::vector<PropertyResult> run_property_suite(const std::function<void(const PropertyResult&)>& on_result = {});

std::string format_result(const PropertyResult& r);

}  // namespace shapemoire
