#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "qvnn/qtensor.hpp"
#include "qvnn/real_matrix.hpp"
#include "qvnn/rng.hpp"

namespace qvnn {

enum class Pass { Train, Infer };

enum class LayerKind : std::uint8_t {
    Dense = 1,
    Conv2d = 2,
    BatchNorm = 3,
    Activation = 4,
    MaxPool = 5,
    Dropout = 6,
    Head = 7,
};

enum class ActKind : std::uint8_t { Relu = 0 };

// Mutable views over a layer's parameters and their gradient buffers.
// `penalized` marks quaternion weights that weight-level regularizers act on
// (weight matrices and convolution kernels; biases and batch-norm shifts are not).
struct QuatParamView {
    std::string name;
    QTensor* value = nullptr;
    QTensor* grad = nullptr;
    bool penalized = false;
};

struct RealParamView {
    std::string name;
    std::vector<double>* value = nullptr;
    std::vector<double>* grad = nullptr;
    bool bn_gamma = false;
};

struct ParamSet {
    std::vector<QuatParamView> quat;
    std::vector<RealParamView> real;

    std::size_t component_count() const;
    std::size_t penalized_quat_count() const;
};

class Layer {
public:
    virtual ~Layer() = default;

    virtual LayerKind kind() const = 0;
    virtual std::unique_ptr<Layer> clone() const = 0;

    // Training-mode forward records the tape state needed by backward; backward
    // consumes it. Inference-mode forward leaves the tape untouched.
    virtual QTensor forward(const QTensor& x, Pass pass, RngStream& rng) = 0;
    virtual QTensor backward(const QTensor& grad_out) = 0;

    virtual void collect_params(ParamSet&) {}
    virtual void zero_grad() {}

    // Seeded weight initialization; layers without trainable weights ignore it.
    virtual void init_params(RngStream&) {}

    const std::string& name() const { return name_; }
    void set_name(std::string n) { name_ = std::move(n); }

protected:
    void mark_tape() { tape_live_ = true; }
    void consume_tape();  // throws StateError when no live tape exists

    std::string name_;
    bool tape_live_ = false;
};

// Fully connected quaternion layer: out[p] = sum_q W[p,q] (x) h[q] + b[p].
// Accepts input of shape [B, in] or [B, C, H, W] with C*H*W == in (implicit flatten).
class QDenseLayer final : public Layer {
public:
    QDenseLayer(std::size_t out_features, std::size_t in_features);

    LayerKind kind() const override { return LayerKind::Dense; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<QDenseLayer>(*this); }

    QTensor forward(const QTensor& x, Pass pass, RngStream& rng) override;
    QTensor backward(const QTensor& grad_out) override;
    void collect_params(ParamSet& out) override;
    void zero_grad() override;
    void init_params(RngStream& rng) override;

    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }

    QTensor W;  // [out x in]
    QTensor b;  // [out]
    QTensor gW, gb;

private:
    std::size_t out_ = 0, in_ = 0;
    std::vector<double> cached_input_;           // interleaved [4*in x B]
    std::vector<std::size_t> cached_in_shape_;   // original input shape
    std::size_t cached_batch_ = 0;
};

// 2-D quaternion convolution with zero-quaternion padding.
// Input [B, inC, H, W] -> output [B, outC, H', W'].
class QConv2dLayer final : public Layer {
public:
    QConv2dLayer(std::size_t out_channels, std::size_t in_channels, std::size_t kh, std::size_t kw,
                 std::size_t stride = 1, std::size_t padding = 0);

    LayerKind kind() const override { return LayerKind::Conv2d; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<QConv2dLayer>(*this); }

    QTensor forward(const QTensor& x, Pass pass, RngStream& rng) override;
    QTensor backward(const QTensor& grad_out) override;
    void collect_params(ParamSet& out) override;
    void zero_grad() override;
    void init_params(RngStream& rng) override;

    std::size_t out_channels() const { return out_c_; }
    std::size_t in_channels() const { return in_c_; }
    std::size_t kernel_h() const { return kh_; }
    std::size_t kernel_w() const { return kw_; }
    std::size_t stride() const { return stride_; }
    std::size_t padding() const { return pad_; }

    QTensor kernels;  // [outC x inC x kh x kw]
    QTensor b;        // [outC]
    QTensor gK, gb;

private:
    std::size_t out_c_ = 0, in_c_ = 0, kh_ = 0, kw_ = 0, stride_ = 1, pad_ = 0;
    RealMatrix cached_cols_;  // [4*inC*kh*kw x B*oH*oW]
    std::vector<std::size_t> cached_in_shape_;
    std::size_t cached_oh_ = 0, cached_ow_ = 0, cached_batch_ = 0;
};

// Split activation: the real nonlinearity applied independently to each plane.
class SplitActivationLayer final : public Layer {
public:
    explicit SplitActivationLayer(ActKind kind = ActKind::Relu) : act_(kind) {}

    LayerKind kind() const override { return LayerKind::Activation; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<SplitActivationLayer>(*this); }

    QTensor forward(const QTensor& x, Pass pass, RngStream& rng) override;
    QTensor backward(const QTensor& grad_out) override;

    ActKind act_kind() const { return act_; }

private:
    ActKind act_;
    QTensor cached_input_;
};

// 2x2/stride-2 max pooling selecting whole quaternions by norm; a trailing odd
// row/column is truncated. Ties go to the first window element in row-major order.
class QMaxPoolLayer final : public Layer {
public:
    QMaxPoolLayer(std::size_t window = 2, std::size_t stride = 2) : window_(window), stride_(stride) {}

    LayerKind kind() const override { return LayerKind::MaxPool; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<QMaxPoolLayer>(*this); }

    QTensor forward(const QTensor& x, Pass pass, RngStream& rng) override;
    QTensor backward(const QTensor& grad_out) override;

    std::size_t window() const { return window_; }
    std::size_t stride() const { return stride_; }

private:
    std::size_t window_ = 2, stride_ = 2;
    std::vector<std::size_t> cached_argmax_;  // flat input index per output element
    std::vector<std::size_t> cached_in_shape_;
};

// Quaternion batch normalization: whitening by a quaternion batch mean and a real
// squared-norm variance, then scaling by real gamma and shifting by quaternion beta.
// Statistics pool over batch (and spatial positions for 4-D input) per channel.
class QBatchNormLayer final : public Layer {
public:
    explicit QBatchNormLayer(std::size_t channels, double epsilon = 1e-5, double momentum = 0.9);

    LayerKind kind() const override { return LayerKind::BatchNorm; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<QBatchNormLayer>(*this); }

    QTensor forward(const QTensor& x, Pass pass, RngStream& rng) override;
    QTensor backward(const QTensor& grad_out) override;
    void collect_params(ParamSet& out) override;
    void zero_grad() override;

    std::size_t channels() const { return channels_; }
    double epsilon() const { return eps_; }
    double momentum() const { return momentum_; }

    std::vector<double> gamma;  // [C], init 1
    QTensor beta;               // [C], init 0
    QTensor running_mu;         // [C]
    std::vector<double> running_var;  // [C], init 1
    std::vector<double> ggamma;
    QTensor gbeta;

private:
    std::size_t channels_ = 0;
    double eps_ = 1e-5, momentum_ = 0.9;

    QTensor cached_xhat_;
    std::vector<double> cached_inv_std_;  // per channel
    std::size_t cached_m_ = 0;            // elements pooled per channel
};

// Whole-quaternion dropout: all four components of a quaternion are kept or dropped
// together; survivors are scaled by 1/(1-p) at train time. Identity at inference.
class QDropoutLayer final : public Layer {
public:
    explicit QDropoutLayer(double p);

    LayerKind kind() const override { return LayerKind::Dropout; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<QDropoutLayer>(*this); }

    QTensor forward(const QTensor& x, Pass pass, RngStream& rng) override;
    QTensor backward(const QTensor& grad_out) override;

    double p() const { return p_; }
    void set_p(double p);

private:
    double p_ = 0.0;
    std::vector<std::uint8_t> cached_mask_;
};

// ---- classification head -----------------------------------------------------------

// Norm of each output quaternion, one real score per class. h is [B x classes].
RealMatrix abs_head(const QTensor& h);

// Row-wise softmax with max-subtraction.
RealMatrix softmax(const RealMatrix& scores);

// Stabilized -log softmax(scores)[label] for a single score vector.
double softmax_xent(const std::vector<double>& scores, std::size_t label);

// abs -> softmax -> cross-entropy head with cached state for backward.
class AbsSoftmaxHead {
public:
    // Returns class probabilities [B x classes]; caches scores and input for backward.
    RealMatrix forward(const QTensor& h, Pass pass);

    // Mean cross-entropy of cached probabilities against labels.
    double loss(const std::vector<int>& labels) const;

    // Backward from d(loss)/d(probabilities) through the softmax Jacobian and the norm.
    QTensor backward(const RealMatrix& dprobs);

    // Fused backward of the mean cross-entropy: dscore = (p - onehot)/B.
    QTensor backward_xent(const std::vector<int>& labels);

    const RealMatrix& probs() const { return probs_; }

private:
    QTensor backward_scores(const RealMatrix& dscores);

    QTensor cached_input_;
    RealMatrix scores_;
    RealMatrix probs_;
    bool tape_live_ = false;
};

}  // namespace qvnn
