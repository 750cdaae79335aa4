#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "shapemoire/bench.hpp"
#include "shapemoire/data_synth.hpp"
#include "shapemoire/metrics.hpp"
#include "shapemoire/ops.hpp"
#include "shapemoire/properties.hpp"
#include "shapemoire/shape_stream.hpp"
#include "shapemoire/shapeconv.hpp"
#include "shapemoire/train.hpp"

namespace py = pybind11;
using namespace shapemoire;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Dims dims(a.shape(), a.shape() + a.ndim());
    return Tensor(dims, std::vector<float>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.dims().begin(), t.dims().end());
    Array out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

ShapeConvParams params_of(const Array& k, float w_base, const Array& w_shape, std::int64_t stride, std::int64_t pad) {
    ShapeConvParams p;
    p.kernel = to_tensor(k);
    p.w_base = Tensor::scalar(w_base);
    p.w_shape = to_tensor(w_shape);
    p.stride = stride;
    p.pad = pad;
    return p;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "ShapeConv layers, dual-stream demoireing and its property checks";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<GeometryError>(m, "GeometryError", PyExc_ValueError);
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<NotFoundError>(m, "NotFoundError", PyExc_FileNotFoundError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    // metrics
    m.def("psnr", [](const Array& a, const Array& b, double max_val) { return psnr(to_tensor(a), to_tensor(b), max_val); },
          py::arg("a"), py::arg("b"), py::arg("max_val") = 1.0);
    m.def("ssim", [](const Array& a, const Array& b) { return ssim(to_tensor(a), to_tensor(b)); });
    m.def("l1", [](const Array& a, const Array& b) { return l1(to_tensor(a), to_tensor(b)); });
    m.def("lp_proxy", [](const Array& a, const Array& b) { return lp_proxy(to_tensor(a), to_tensor(b)); });

    // layers
    m.def("conv2d", [](const Array& x, const Array& k, std::int64_t stride, std::int64_t pad) {
        return to_array(conv2d(to_tensor(x), to_tensor(k), stride, pad));
    }, py::arg("x"), py::arg("kernel"), py::arg("stride") = 1, py::arg("pad") = 0);
    m.def("identity_shape_weights", [](std::int64_t kh, std::int64_t kw, std::int64_t cin) {
        return to_array(identity_shape_weights<float>(kh, kw, cin));
    });
    m.def("shape_kernel", [](const Array& k, float w_base, const Array& w_shape) {
        return to_array(shape_kernel(to_tensor(k), Tensor::scalar(w_base), to_tensor(w_shape)));
    }, "Fused kernel K_BS", py::arg("kernel"), py::arg("w_base"), py::arg("w_shape"));
    m.def("forward_patch", [](const Array& x, const Array& k, float w_base, const Array& w_shape, std::int64_t stride,
                              std::int64_t pad) {
        return to_array(forward_patch(params_of(k, w_base, w_shape, stride, pad), to_tensor(x)));
    }, py::arg("x"), py::arg("kernel"), py::arg("w_base"), py::arg("w_shape"), py::arg("stride") = 1, py::arg("pad") = 0);
    m.def("forward_kernel", [](const Array& x, const Array& k, float w_base, const Array& w_shape, std::int64_t stride,
                               std::int64_t pad) {
        return to_array(forward_kernel(params_of(k, w_base, w_shape, stride, pad), to_tensor(x)));
    }, py::arg("x"), py::arg("kernel"), py::arg("w_base"), py::arg("w_shape"), py::arg("stride") = 1, py::arg("pad") = 0);
    m.def("shape_transform", [](const Array& x) { return to_array(shape_transform(to_tensor(x))); });

    // data
    m.def("make_pair", [](std::uint64_t clean_seed, std::uint64_t moire_seed, std::int64_t size) {
        auto p = make_pair(clean_seed, MoireParams::sample(moire_seed), size, "");
        return py::make_tuple(to_array(p.clean), to_array(p.moire));
    }, "Returns (clean, moire) as [size, size, 3] arrays", py::arg("clean_seed"), py::arg("moire_seed"), py::arg("size") = 64);
    m.def("synthesize_dataset", [](const std::filesystem::path& root, std::int64_t n_train, std::int64_t n_val,
                                   std::int64_t size, std::uint64_t seed) {
        synthesize_dataset(root, DatasetSpec{n_train, n_val, size, seed});
    }, py::arg("root"), py::arg("n_train") = 400, py::arg("n_val") = 50, py::arg("size") = 64, py::arg("seed") = 0);

    // networks
    py::class_<DemoireNet>(m, "DemoireNet")
        .def(py::init([](std::vector<std::int64_t> widths, int blocks, int kernel_size, const std::string& kind,
                         std::uint64_t seed) {
                 NetConfig c;
                 c.widths = std::move(widths);
                 c.blocks_per_scale = blocks;
                 c.kernel_size = kernel_size;
                 c.layer_kind = parse_layer_kind(kind);
                 c.seed = seed;
                 return DemoireNet::build(c);
             }),
             py::arg("widths") = std::vector<std::int64_t>{16, 32, 64}, py::arg("blocks_per_scale") = 2,
             py::arg("kernel_size") = 3, py::arg("layer_kind") = "vanilla", py::arg("seed") = 0)
        .def_static("load", &load_model)
        .def("save", [](const DemoireNet& n, const std::filesystem::path& p) { save_model(p, n); })
        .def("forward", [](const DemoireNet& n, const Array& x) { return to_array(n.forward(to_tensor(x))); })
        .def("predict", [](const DemoireNet& n, const Array& x) { return to_array(n.predict(to_tensor(x))); })
        .def("fuse", &DemoireNet::fuse_model)
        .def("vanilla_twin", [](const DemoireNet& n) { return vanilla_twin(n); })
        .def_property_readonly("parameter_count", &DemoireNet::parameter_count)
        .def_property_readonly("fused", &DemoireNet::fused)
        .def_property_readonly("layer_kind", [](const DemoireNet& n) { return to_string(n.config().layer_kind); })
        .def("parameters", [](const DemoireNet& n) {
            py::dict d;
            for (const auto& [name, t] : n.parameters()) d[py::str(name)] = to_array(t);
            return d;
        });

    m.def("train", [](const std::filesystem::path& config_path) {
        auto c = load_train_config(config_path);
        apply_env_overrides(c);
        py::gil_scoped_release release;
        auto r = train_to_dir(c);
        py::gil_scoped_acquire acquire;
        py::list log;
        for (const auto& e : r.log) {
            log.append(py::dict(py::arg("epoch") = e.epoch, py::arg("l_base") = e.l_base, py::arg("l_shape") = e.l_shape,
                                py::arg("l_total") = e.l_total, py::arg("val_psnr") = e.val_psnr,
                                py::arg("val_ssim") = e.val_ssim));
        }
        return log;
    }, "Trains from a config file, writing into its ckpt_dir. Returns the epoch log.");

    m.def("evaluate", [](const DemoireNet& net, const std::filesystem::path& data, const std::string& split) {
        const auto r = evaluate(net, load_split(data, split));
        return py::dict(py::arg("psnr") = r.psnr_db, py::arg("ssim") = r.ssim, py::arg("n_images") = r.n_images);
    }, py::arg("net"), py::arg("data"), py::arg("split") = "val");

    m.def("check", [] {
        std::vector<PropertyResult> results;
        {
            py::gil_scoped_release release;
            results = run_property_suite();
        }
        py::list out;
        for (const auto& r : results) {
            out.append(py::dict(py::arg("name") = r.name, py::arg("passed") = r.passed, py::arg("measured") = r.measured,
                                py::arg("threshold") = r.threshold, py::arg("detail") = r.detail));
        }
        return out;
    }, "Runs the numerical property suite");
}
