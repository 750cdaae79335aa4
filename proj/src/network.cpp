#include "shapemoire/network.hpp"

#include <fstream>
#include <map>
#include <json.hpp>

#include "shapemoire/ops.hpp"

namespace shapemoire {

std::string to_string(LayerKind kind) {
    return kind == LayerKind::shapeconv ? "shapeconv" : "vanilla";
}

LayerKind parse_layer_kind(const std::string& text) {
    if (text == "vanilla") return LayerKind::vanilla;
    if (text == "shapeconv") return LayerKind::shapeconv;
    throw ValidationError("layer_kind must be 'vanilla' or 'shapeconv', got '" + text + "'");
}

void NetConfig::validate() const {
    if (widths.size() != 3) throw ValidationError("network needs exactly 3 widths (full, 1/2, 1/4 scale)");
    for (auto w : widths) {
        if (w <= 0) throw ValidationError("network widths must be positive");
    }
    if (blocks_per_scale < 0) throw ValidationError("blocks_per_scale must be >= 0");
    if (kernel_size <= 0 || kernel_size % 2 == 0) throw ValidationError("kernel_size must be odd and positive");
}

template <class Real>
BasicTensor<Real> BasicConvLayer<Real>::effective_kernel() const {
    if (!shape_weights) return params.kernel;
    return shape_kernel(params.kernel, params.w_base, params.w_shape);
}

template <class Real>
BasicTensor<Real> BasicConvLayer<Real>::forward(const BasicTensor<Real>& x) const {
    auto y = add_channel_bias(conv2d(x, effective_kernel(), params.stride, params.pad), bias);
    return relu ? shapemoire::relu(y) : y;
}

namespace {

struct LayerSpec {
    std::string name;
    std::int64_t in, out;
    bool relu;
    bool head;
};

std::vector<LayerSpec> layer_specs(const NetConfig& c) {
    std::vector<LayerSpec> specs;
    for (std::size_t s = 0; s < c.widths.size(); ++s) {
        const auto prefix = "s" + std::to_string(s);
        const auto in = s == 0 ? 3 : c.widths[s - 1];
        specs.push_back({prefix + ".in", in, c.widths[s], true, false});
        for (int b = 0; b < c.blocks_per_scale; ++b) {
            specs.push_back({prefix + ".block" + std::to_string(b), c.widths[s], c.widths[s], true, false});
        }
        specs.push_back({prefix + ".head", c.widths[s], 3, false, true});
    }
    return specs;
}

}  // namespace

template <class Real>
BasicDemoireNet<Real> BasicDemoireNet<Real>::build(const NetConfig& config) {
    config.validate();
    BasicDemoireNet net;
    net.config_ = config;
    Rng rng(config.seed);
    const auto k = static_cast<std::int64_t>(config.kernel_size);
    for (const auto& spec : layer_specs(config)) {
        BasicConvLayer<Real> layer;
        layer.name = spec.name;
        layer.relu = spec.relu;
        const double scale = spec.head ? config.head_init_scale : config.hidden_init_scale;
        // Both kinds draw K identically so vanilla/ShapeConv twins share kernels.
        layer.params.kernel = init_kernel<Real>(k, k, spec.in, spec.out, scale, rng);
        layer.params.stride = 1;
        layer.params.pad = k / 2;
        if (config.layer_kind == LayerKind::shapeconv) {
            layer.shape_weights = true;
            layer.params.w_base = BasicTensor<Real>::scalar(Real(1));
            layer.params.w_shape = identity_shape_weights<Real>(k, k, spec.in);
        }
        layer.bias = BasicTensor<Real>(Dims{spec.out});
        net.layers_.push_back(std::move(layer));
    }
    return net;
}

template <class Real>
BasicTensor<Real> BasicDemoireNet<Real>::forward(const BasicTensor<Real>& x) const {
    if (!x.defined() || x.rank() != 4 || x.dim(3) != 3) {
        throw ShapeError("DemoireNet expects [N, H, W, 3], got " + dims_to_string(x.dims()));
    }
    const auto factor = std::int64_t{1} << (config_.widths.size() - 1);
    if (x.dim(1) % factor != 0 || x.dim(2) % factor != 0) {
        throw GeometryError("DemoireNet needs H and W divisible by " + std::to_string(factor) + ", got " +
                            dims_to_string(x.dims()));
    }
    const auto per_scale = static_cast<std::size_t>(config_.blocks_per_scale) + 2;
    BasicTensor<Real> out = x;
    BasicTensor<Real> features = x;
    for (std::size_t s = 0; s < config_.widths.size(); ++s) {
        if (s > 0) features = avgpool_2x(features);
        const auto* layer = &layers_[s * per_scale];
        for (std::size_t i = 0; i + 1 < per_scale; ++i) features = layer[i].forward(features);
        auto residual = layer[per_scale - 1].forward(features);
        for (std::size_t u = 0; u < s; ++u) residual = upsample_nearest_2x(residual);
        out = add(out, residual);
    }
    return out;
}

template <class Real>
BasicTensor<Real> BasicDemoireNet<Real>::predict(const BasicTensor<Real>& x) const {
    return clamp(forward(x), 0.0, 1.0);
}

template <class Real>
std::vector<std::pair<std::string, BasicTensor<Real>>> BasicDemoireNet<Real>::parameters() const {
    std::vector<std::pair<std::string, BasicTensor<Real>>> params;
    for (const auto& layer : layers_) {
        params.emplace_back(layer.name + (fused_ ? ".K_BS" : ".K"), layer.params.kernel);
        if (layer.shape_weights) {
            params.emplace_back(layer.name + ".W_B", layer.params.w_base);
            params.emplace_back(layer.name + ".W_S", layer.params.w_shape);
        }
        params.emplace_back(layer.name + ".bias", layer.bias);
    }
    return params;
}

template <class Real>
std::int64_t BasicDemoireNet<Real>::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : parameters()) n += t.numel();
    return n;
}

template <class Real>
BasicDemoireNet<Real> BasicDemoireNet<Real>::fuse_model() const {
    if (fused_) throw ValidationError("fuse_model: network is already fused");
    if (config_.layer_kind != LayerKind::shapeconv) {
        throw ValidationError("fuse_model: only ShapeConv networks can be fused");
    }
    BasicDemoireNet out;
    out.config_ = config_;
    out.fused_ = true;
    for (const auto& layer : layers_) {
        BasicConvLayer<Real> fused_layer;
        fused_layer.name = layer.name;
        fused_layer.relu = layer.relu;
        fused_layer.params.kernel = fuse(layer.params).kernel;
        fused_layer.params.stride = layer.params.stride;
        fused_layer.params.pad = layer.params.pad;
        fused_layer.bias = layer.bias.clone();
        out.layers_.push_back(std::move(fused_layer));
    }
    return out;
}

template <class Real>
BasicDemoireNet<Real> BasicDemoireNet<Real>::clone() const {
    return cast_to<Real>();
}

template <class Real>
template <class To>
BasicDemoireNet<To> BasicDemoireNet<Real>::cast_to() const {
    BasicDemoireNet<To> out;
    out.config_ = config_;
    out.fused_ = fused_;
    for (const auto& layer : layers_) {
        BasicConvLayer<To> l;
        l.name = layer.name;
        l.relu = layer.relu;
        l.shape_weights = layer.shape_weights;
        l.params.kernel = cast<To>(layer.params.kernel);
        if (layer.shape_weights) {
            l.params.w_base = cast<To>(layer.params.w_base);
            l.params.w_shape = cast<To>(layer.params.w_shape);
        }
        l.params.stride = layer.params.stride;
        l.params.pad = layer.params.pad;
        l.bias = cast<To>(layer.bias);
        out.layers_.push_back(std::move(l));
    }
    return out;
}

template <class Real>
std::vector<NamedTensor> BasicDemoireNet<Real>::state() const {
    std::vector<NamedTensor> tensors;
    for (const auto& [name, t] : parameters()) tensors.push_back({name, cast<float>(t)});
    return tensors;
}

template <class Real>
BasicDemoireNet<Real> BasicDemoireNet<Real>::from_state(const NetConfig& config, bool fused,
                                                        const std::vector<NamedTensor>& tensors) {
    auto net = build(config);
    if (fused) {
        if (config.layer_kind != LayerKind::shapeconv) {
            throw ValidationError("a fused checkpoint must come from a ShapeConv network");
        }
        net.fused_ = true;
        for (auto& layer : net.layers_) {
            layer.shape_weights = false;
            layer.params.w_base = {};
            layer.params.w_shape = {};
        }
    }
    std::map<std::string, const Tensor*> by_name;
    for (const auto& nt : tensors) by_name[nt.name] = &nt.tensor;
    std::size_t used = 0;
    for (auto& [name, t] : net.parameters()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ValidationError("checkpoint is missing tensor " + name);
        if (it->second->dims() != t.dims()) {
            throw ValidationError("checkpoint tensor " + name + " has dims " + dims_to_string(it->second->dims()) +
                                  ", expected " + dims_to_string(t.dims()));
        }
        auto src = it->second->data();
        auto dst = t.mutable_data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(src[i]);
        ++used;
    }
    if (used != tensors.size()) throw ValidationError("checkpoint holds tensors this architecture does not use");
    return net;
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
    auto p = checkpoint;
    p += ".json";
    return p;
}

void save_model(const std::filesystem::path& path, const DemoireNet& net) {
    save_checkpoint(path, net.state());
    const auto& c = net.config();
    nlohmann::ordered_json j;
    j["format"] = "shapemoire-net";
    j["version"] = 1;
    j["layer_kind"] = to_string(c.layer_kind);
    j["fused"] = net.fused();
    j["widths"] = c.widths;
    j["blocks_per_scale"] = c.blocks_per_scale;
    j["kernel_size"] = c.kernel_size;
    j["seed"] = c.seed;
    j["hidden_init_scale"] = c.hidden_init_scale;
    j["head_init_scale"] = c.head_init_scale;
    j["parameter_count"] = net.parameter_count();
    std::ofstream out(sidecar_path(path));
    if (!out) throw IoError("cannot write " + sidecar_path(path).string());
    out << j.dump(2) << '\n';
}

DemoireNet load_model(const std::filesystem::path& path) {
    const auto side = sidecar_path(path);
    std::ifstream in(side);
    if (!in) throw NotFoundError("model sidecar not found: " + side.string());
    nlohmann::json j;
    try {
        in >> j;
        NetConfig c;
        c.layer_kind = parse_layer_kind(j.at("layer_kind").get<std::string>());
        c.widths = j.at("widths").get<std::vector<std::int64_t>>();
        c.blocks_per_scale = j.at("blocks_per_scale").get<int>();
        c.kernel_size = j.at("kernel_size").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.hidden_init_scale = j.value("hidden_init_scale", c.hidden_init_scale);
        c.head_init_scale = j.value("head_init_scale", c.head_init_scale);
        return DemoireNet::from_state(c, j.at("fused").get<bool>(), load_checkpoint(path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("bad model sidecar " + side.string() + ": " + e.what());
    }
}

template struct BasicConvLayer<float>;
template struct BasicConvLayer<double>;
template class BasicDemoireNet<float>;
template class BasicDemoireNet<double>;
template BasicDemoireNet<double> BasicDemoireNet<float>::cast_to<double>() const;
template BasicDemoireNet<float> BasicDemoireNet<double>::cast_to<float>() const;

}  // namespace shapemoire
