#include "shapemoire/bench.hpp"

#include <algorithm>
#include <chrono>
#include <json.hpp>
#include <numeric>

#include "shapemoire/ops.hpp"
#include "shapemoire/random.hpp"
#include "shapemoire/shape_stream.hpp"

namespace shapemoire {

DemoireNet vanilla_twin(const DemoireNet& net) {
    const DemoireNet fused =
        net.config().layer_kind == LayerKind::shapeconv && !net.fused() ? net.fuse_model() : net.clone();
    NetConfig c = net.config();
    c.layer_kind = LayerKind::vanilla;
    auto twin = DemoireNet::build(c);
    auto& dst = twin.layers();
    const auto& src = fused.layers();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i].params.kernel = src[i].params.kernel.clone();
        dst[i].bias = src[i].bias.clone();
    }
    return twin;
}

namespace {

using Clock = std::chrono::steady_clock;

LatencyStats summarize(std::vector<double> ms) {
    LatencyStats s;
    if (ms.empty()) return s;
    std::sort(ms.begin(), ms.end());
    s.median_ms = ms[ms.size() / 2];
    s.p90_ms = ms[std::min(ms.size() - 1, ms.size() * 9 / 10)];
    s.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
    return s;
}

double time_one(const DemoireNet& net, const Tensor& x) {
    const Model<float> model = [&](const Tensor& in) { return net.predict(in); };
    const auto t0 = Clock::now();
    auto y = inference(model, x);
    const auto t1 = Clock::now();
    if (!y.defined()) throw NumericError("benchmark: empty output");
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

nlohmann::ordered_json stats_json(const LatencyStats& s) {
    return {{"median_ms", s.median_ms}, {"mean_ms", s.mean_ms}, {"p90_ms", s.p90_ms}};
}

}  // namespace

std::string LatencyReport::json() const {
    nlohmann::ordered_json j;
    j["images"] = images;
    j["size"] = size;
    j["vanilla"] = stats_json(vanilla);
    j["fused"] = stats_json(fused);
    if (has_unfused) j["unfused"] = stats_json(unfused);
    j["vanilla_params"] = vanilla_params;
    j["fused_params"] = fused_params;
    j["overhead"] = overhead();
    return j.dump(2);
}

LatencyReport benchmark_latency(const DemoireNet& net, std::int64_t images, std::int64_t size, std::uint64_t seed,
                                bool include_unfused) {
    if (images < 1) throw ValidationError("benchmark: need at least one image");
    const auto factor = std::int64_t{1} << (net.config().widths.size() - 1);
    if (size < factor || size % factor != 0) {
        throw GeometryError("benchmark: size must be a positive multiple of " + std::to_string(factor));
    }
    const bool shape = net.config().layer_kind == LayerKind::shapeconv;
    const DemoireNet fused = shape && !net.fused() ? net.fuse_model() : net.clone();
    const DemoireNet twin = vanilla_twin(net);
    include_unfused = include_unfused && shape && !net.fused();

    // A small pool of distinct inputs, cycled.
    Rng rng(seed);
    std::vector<Tensor> pool;
    for (int i = 0; i < 16; ++i) pool.push_back(random_uniform<float>(Dims{1, size, size, 3}, 0, 1, rng));

    for (int i = 0; i < 10; ++i) {
        time_one(twin, pool[i % pool.size()]);
        time_one(fused, pool[i % pool.size()]);
        if (include_unfused) time_one(net, pool[i % pool.size()]);
    }

    std::vector<double> t_van, t_fused, t_unfused;
    constexpr std::int64_t kBlock = 25;
    for (std::int64_t start = 0, block = 0; start < images; start += kBlock, ++block) {
        const auto end = std::min(images, start + kBlock);
        // Alternate which model goes first in each block.
        for (int pass = 0; pass < 2; ++pass) {
            const bool vanilla_now = (pass == 0) == (block % 2 == 0);
            for (auto i = start; i < end; ++i) {
                const auto& x = pool[static_cast<std::size_t>(i) % pool.size()];
                if (vanilla_now) t_van.push_back(time_one(twin, x));
                else t_fused.push_back(time_one(fused, x));
            }
        }
        if (include_unfused)
            for (auto i = start; i < end; ++i) t_unfused.push_back(time_one(net, pool[static_cast<std::size_t>(i) % pool.size()]));
    }

    LatencyReport r;
    r.images = images;
    r.size = size;
    r.vanilla = summarize(t_van);
    r.fused = summarize(t_fused);
    r.has_unfused = include_unfused;
    if (include_unfused) r.unfused = summarize(t_unfused);
    r.vanilla_params = twin.parameter_count();
    r.fused_params = fused.parameter_count();
    return r;
}

}  // namespace shapemoire
