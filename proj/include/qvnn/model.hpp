#pragma once

#include <memory>
#include <string>
#include <vector>

#include "qvnn/layers.hpp"

namespace qvnn {

// A feed-forward stack of quaternion layers followed by the norm-softmax head.
class Model {
public:
    Model() = default;
    Model(const Model& o) { *this = o; }
    Model& operator=(const Model& o);
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    std::string arch;
    std::vector<std::size_t> input_shape;  // {C, H, W} of one sample
    std::size_t num_classes = 0;
    std::vector<std::unique_ptr<Layer>> layers;
    AbsSoftmaxHead head;

    void add(std::unique_ptr<Layer> layer);

    // Runs the stack and the head; returns class probabilities [B x classes].
    RealMatrix forward(const QTensor& x, Pass pass, RngStream& rng);

    // Mean cross-entropy of the most recent forward against labels.
    double loss(const std::vector<int>& labels) const { return head.loss(labels); }

    // Fused backward of the mean cross-entropy; returns the gradient w.r.t. the input.
    QTensor backward_xent(const std::vector<int>& labels);

    // Backward from an arbitrary gradient w.r.t. the probabilities.
    QTensor backward(const RealMatrix& dprobs);

    ParamSet params();
    void zero_grad();
    void init_params(RngStream& rng);

    // Number of quaternion weights the weight-level regularizers act on.
    std::size_t penalized_quat_count();

    // Output shape (without the batch extent) of every layer for a single sample.
    std::vector<std::vector<std::size_t>> trace_shapes() const;

    // Sets every dropout layer's rate.
    void set_dropout(double p);
};

}  // namespace qvnn
