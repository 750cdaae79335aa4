#include "shapemoire/shape_stream.hpp"

#include "shapemoire/metrics.hpp"
#include "shapemoire/ops.hpp"

namespace shapemoire {

template <class Real>
BasicTensor<Real> shape_transform(const BasicTensor<Real>& images) {
    if (!images.defined() || images.rank() != 4) {
        throw ShapeError("shape_transform: expected [N, H, W, C], got " + dims_to_string(images.dims()));
    }
    return center_over_axes(images, 1, 2);
}

template <class Real>
BasicDualBatch<Real> make_dual_batch(const BasicTensor<Real>& moire) {
    return {concat_axis0(moire, shape_transform(moire)), moire.dim(0)};
}

template <class Real>
BasicLoss<Real> base_loss(const BasicTensor<Real>& output, const BasicTensor<Real>& gt, double lambda) {
    auto pixel = l1_loss(output, gt);
    auto total = pixel;
    if (lambda != 0.0) total = add(pixel, scalar_mul(lp_proxy_loss(output, gt), lambda));
    LossReport report;
    report.l_base = static_cast<double>(total.item());
    report.l_total = report.l_base;
    report.lambda = lambda;
    return {total, report};
}

template <class Real>
BasicLoss<Real> total_loss(const BasicTensor<Real>& output, const BasicTensor<Real>& gt, double lambda,
                           double shape_weight) {
    if (!output.defined() || !gt.defined() || output.rank() != 4 || gt.rank() != 4 ||
        output.dim(0) != 2 * gt.dim(0)) {
        throw ShapeError("total_loss: output " + dims_to_string(output.dims()) + " is not a dual batch for gt " +
                         dims_to_string(gt.dims()));
    }
    auto [raw, shape] = split_axis0(output, gt.dim(0));
    auto base = base_loss(raw, gt, lambda);
    auto shaped = base_loss(shape, shape_transform(gt), lambda);
    auto total = shape_weight == 1.0 ? add(base.total, shaped.total)
                                     : add(base.total, scalar_mul(shaped.total, shape_weight));
    LossReport report;
    report.l_base = base.report.l_base;
    report.l_shape = shaped.report.l_base;
    report.l_total = report.l_base + shape_weight * report.l_shape;
    report.lambda = lambda;
    return {total, report};
}

template <class Real>
BasicTensor<Real> inference(const Model<Real>& model, const BasicTensor<Real>& moire) {
    return model(moire);
}

#define SHAPEMOIRE_INSTANTIATE_STREAM(Real)                                                               \
    template BasicTensor<Real> shape_transform(const BasicTensor<Real>&);                                 \
    template BasicDualBatch<Real> make_dual_batch(const BasicTensor<Real>&);                              \
    template BasicLoss<Real> base_loss(const BasicTensor<Real>&, const BasicTensor<Real>&, double);       \
    template BasicLoss<Real> total_loss(const BasicTensor<Real>&, const BasicTensor<Real>&, double, double); \
    template BasicTensor<Real> inference(const Model<Real>&, const BasicTensor<Real>&);

SHAPEMOIRE_INSTANTIATE_STREAM(float)
SHAPEMOIRE_INSTANTIATE_STREAM(double)

}  // namespace shapemoire
