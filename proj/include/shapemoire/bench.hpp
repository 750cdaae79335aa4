#pragma once

#include <cstdint>
#include <string>

#include "shapemoire/network.hpp"

namespace shapemoire {

// Vanilla-kind network holding `net`'s effective kernels and biases, so it
// computes the same function with plain convolutions. ShapeConv nets are
// fused first.
DemoireNet vanilla_twin(const DemoireNet& net);

struct LatencyStats {
    double median_ms = 0;
    double mean_ms = 0;
    double p90_ms = 0;
};

struct LatencyReport {
    std::int64_t images = 0;
    std::int64_t size = 0;
    LatencyStats vanilla;
    LatencyStats fused;
    LatencyStats unfused;  // training form, only when measured
    bool has_unfused = false;
    std::int64_t vanilla_params = 0;
    std::int64_t fused_params = 0;

    // fused / vanilla - 1 on median per-image latency.
    double overhead() const { return fused.median_ms / vanilla.median_ms - 1.0; }
    std::string json() const;
};

// Per-image inference latency of the fused network against its vanilla twin
// on `images` single-image [1, size, size, 3] calls each. The two models are
// timed in alternating blocks so drift affects both alike.
LatencyReport benchmark_latency(const DemoireNet& net, std::int64_t images = 1000, std::int64_t size = 64,
                                std::uint64_t seed = 0, bool include_unfused = false);

}  // namespace shapemoire
