#include "qvnn/model.hpp"

#include "qvnn/error.hpp"

namespace qvnn {

Model& Model::operator=(const Model& o) {
    if (this == &o) return *this;
    arch = o.arch;
    input_shape = o.input_shape;
    num_classes = o.num_classes;
    head = o.head;
    layers.clear();
    layers.reserve(o.layers.size());
    for (const auto& l : o.layers) layers.push_back(l->clone());
    return *this;
}

void Model::add(std::unique_ptr<Layer> layer) {
    if (layer->name().empty()) layer->set_name("layer" + std::to_string(layers.size()));
    layers.push_back(std::move(layer));
}

RealMatrix Model::forward(const QTensor& x, Pass pass, RngStream& rng) {
    if (layers.empty()) throw StateError("model: forward on an empty layer stack");
    QTensor h = x;
    for (auto& l : layers) h = l->forward(h, pass, rng);
    return head.forward(h, pass);
}

QTensor Model::backward_xent(const std::vector<int>& labels) {
    QTensor g = head.backward_xent(labels);
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) g = (*it)->backward(g);
    return g;
}

QTensor Model::backward(const RealMatrix& dprobs) {
    QTensor g = head.backward(dprobs);
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) g = (*it)->backward(g);
    return g;
}

ParamSet Model::params() {
    ParamSet out;
    for (auto& l : layers) l->collect_params(out);
    return out;
}

void Model::zero_grad() {
    for (auto& l : layers) l->zero_grad();
}

void Model::init_params(RngStream& rng) {
    for (auto& l : layers) l->init_params(rng);
}

std::size_t Model::penalized_quat_count() {
    return params().penalized_quat_count();
}

std::vector<std::vector<std::size_t>> Model::trace_shapes() const {
    if (input_shape.size() != 3) throw StateError("model: input shape is not set");
    std::vector<std::size_t> cur = {1, input_shape[0], input_shape[1], input_shape[2]};
    std::vector<std::vector<std::size_t>> out;
    out.reserve(layers.size());
    for (const auto& l : layers) {
        switch (l->kind()) {
            case LayerKind::Dense: {
                const auto& d = static_cast<const QDenseLayer&>(*l);
                std::size_t feat = 1;
                for (std::size_t m = 1; m < cur.size(); ++m) feat *= cur[m];
                if (feat != d.in_features())
                    throw ShapeError(l->name() + ": stack provides " + std::to_string(feat) + " features, layer expects " +
                                     std::to_string(d.in_features()));
                cur = {1, d.out_features()};
                break;
            }
            case LayerKind::Conv2d: {
                const auto& cv = static_cast<const QConv2dLayer&>(*l);
                if (cur.size() != 4 || cur[1] != cv.in_channels())
                    throw ShapeError(l->name() + ": stack provides " + shape_str(cur) + ", layer expects " +
                                     std::to_string(cv.in_channels()) + " channels");
                const std::size_t oh = (cur[2] + 2 * cv.padding() - cv.kernel_h()) / cv.stride() + 1;
                const std::size_t ow = (cur[3] + 2 * cv.padding() - cv.kernel_w()) / cv.stride() + 1;
                cur = {1, cv.out_channels(), oh, ow};
                break;
            }
            case LayerKind::MaxPool: {
                const auto& p = static_cast<const QMaxPoolLayer&>(*l);
                if (cur.size() != 4) throw ShapeError(l->name() + ": pooling needs 4-D input, stack provides " + shape_str(cur));
                cur = {1, cur[1], (cur[2] - p.window()) / p.stride() + 1, (cur[3] - p.window()) / p.stride() + 1};
                break;
            }
            case LayerKind::BatchNorm: {
                const auto& bn = static_cast<const QBatchNormLayer&>(*l);
                if (cur[1] != bn.channels())
                    throw ShapeError(l->name() + ": stack provides " + std::to_string(cur[1]) + " channels, layer expects " +
                                     std::to_string(bn.channels()));
                break;
            }
            case LayerKind::Activation:
            case LayerKind::Dropout:
            case LayerKind::Head:
                break;
        }
        out.push_back(std::vector<std::size_t>(cur.begin() + 1, cur.end()));
    }
    return out;
}

void Model::set_dropout(double p) {
    for (auto& l : layers)
        if (l->kind() == LayerKind::Dropout) static_cast<QDropoutLayer&>(*l).set_p(p);
}

}  // namespace qvnn
