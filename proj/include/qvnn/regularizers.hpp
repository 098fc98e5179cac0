#pragma once

#include <cstddef>
#include <string>

#include "qvnn/model.hpp"

namespace qvnn {

enum class RegKind {
    None,
    L2Elem,      // elementwise squared-l2 on weight components
    L1Elem,      // elementwise l1 on weight components
    RQ,          // l1 on whole-quaternion norms (group lasso over the 4 components)
    RQL,         // RQ + elementwise l1 under one shared lambda
    BnGammaL1,   // l1 on batch-norm scales (neuron level)
    RQBnGammaL1, // RQ + BnGammaL1 under one shared lambda
};

RegKind parse_reg_kind(const std::string& name);  // none|l2|l1|rq|rql|bn-l1|rq+bn-l1
std::string reg_kind_name(RegKind kind);

struct RegConfig {
    RegKind kind = RegKind::None;
    double lambda = 0.0;
    double threshold = 1e-3;
};

// Each penalty returns the unweighted value r(theta) and accumulates
// lambda * subgradient into the gradient buffers of `params`. Penalties act on the
// penalized quaternion weights only (weight matrices and convolution kernels);
// biases and batch-norm shifts are never penalized, and gamma only by the
// batch-norm penalty.

// Sum of |w_c| over all components of all penalized weights; subgradient sign(w_c), 0 at 0.
double reg_l1_elem(ParamSet& params, double lambda);

// 0.5 * sum of w_c^2; gradient w_c.
double reg_l2_elem(ParamSet& params, double lambda);

// (1/Q) * sum of quaternion norms, Q = number of penalized quaternion weights;
// subgradient w_c / (Q * |w|) away from the origin, 0 at it.
double reg_rq(ParamSet& params, double lambda);

// reg_rq + reg_l1_elem; the caller's single lambda weights the sum.
double reg_rql(ParamSet& params, double lambda);

// Mean |gamma| over all batch-norm scales; subgradient sign(gamma)/|Gamma|.
double reg_bn_gamma(ParamSet& params, double lambda);

// Dispatches on cfg.kind with cfg.lambda; returns r(theta) (0 for RegKind::None).
double apply_regularizer(ParamSet& params, const RegConfig& cfg);

// ---- sparsity metrics ----------------------------------------------------------------

struct SparsityReport {
    double component_sparsity = 0.0;   // fraction of weight components with |w_c| < tau
    double quaternion_sparsity = 0.0;  // fraction of weights with all four components below tau
    double neuron_sparsity = 0.0;      // fraction of BN channels with |gamma| < tau (0 without BN)
    std::size_t live_params = 0;       // quaternion parameters left after pruning dead channels
    std::size_t live_macs = 0;         // quaternion MACs reachable from live channels
    std::size_t total_params = 0;      // same counts with every channel treated as live
    std::size_t total_macs = 0;
};

SparsityReport sparsity_report(Model& model, double tau);

// ---- structural pruning --------------------------------------------------------------

// Removes every BN channel with |gamma| < tau: the producing convolution loses those
// output channels, the batch-norm record shrinks, and the next parameterized layer
// loses the matching input slices. The removed channel's constant inference output
// (its shift beta, passed through the activation) is folded into the consumer's bias,
// which is exact for zero-padding consumers. Returns the smaller model; the input
// model is left untouched.
Model prune_gamma(const Model& model, double tau);

}  // namespace qvnn
