#include "qvnn/regularizers.hpp"

#include <cmath>
#include <cstdlib>

#include "qvnn/error.hpp"

namespace qvnn {

RegKind parse_reg_kind(const std::string& name) {
    if (name == "none") return RegKind::None;
    if (name == "l2") return RegKind::L2Elem;
    if (name == "l1") return RegKind::L1Elem;
    if (name == "rq") return RegKind::RQ;
    if (name == "rql") return RegKind::RQL;
    if (name == "bn-l1") return RegKind::BnGammaL1;
    if (name == "rq+bn-l1") return RegKind::RQBnGammaL1;
    throw ConfigError("unknown regularizer '" + name + "' (valid: none, l2, l1, rq, rql, bn-l1, rq+bn-l1)");
}

std::string reg_kind_name(RegKind kind) {
    switch (kind) {
        case RegKind::None: return "none";
        case RegKind::L2Elem: return "l2";
        case RegKind::L1Elem: return "l1";
        case RegKind::RQ: return "rq";
        case RegKind::RQL: return "rql";
        case RegKind::BnGammaL1: return "bn-l1";
        case RegKind::RQBnGammaL1: return "rq+bn-l1";
    }
    return "?";
}

double reg_l1_elem(ParamSet& params, double lambda) {
    double penalty = 0.0;
    for (auto& v : params.quat) {
        if (!v.penalized) continue;
        for (int c = 0; c < 4; ++c) {
            const double* w = v.value->plane(c);
            double* g = v.grad->plane(c);
            for (std::size_t n = 0; n < v.value->numel(); ++n) {
                penalty += std::abs(w[n]);
                if (w[n] > 0.0)
                    g[n] += lambda;
                else if (w[n] < 0.0)
                    g[n] -= lambda;
            }
        }
    }
    return penalty;
}

double reg_l2_elem(ParamSet& params, double lambda) {
    double penalty = 0.0;
    for (auto& v : params.quat) {
        if (!v.penalized) continue;
        for (int c = 0; c < 4; ++c) {
            const double* w = v.value->plane(c);
            double* g = v.grad->plane(c);
            for (std::size_t n = 0; n < v.value->numel(); ++n) {
                penalty += 0.5 * w[n] * w[n];
                g[n] += lambda * w[n];
            }
        }
    }
    return penalty;
}

double reg_rq(ParamSet& params, double lambda) {
    const std::size_t Q = params.penalized_quat_count();
    if (Q == 0) throw ConfigError("quaternion-norm penalty: the model has no penalized quaternion weights");
    const double inv_q = 1.0 / static_cast<double>(Q);
    double penalty = 0.0;
    for (auto& v : params.quat) {
        if (!v.penalized) continue;
        for (std::size_t n = 0; n < v.value->numel(); ++n) {
            const Quaternion w = v.value->at(n);
            const double norm = qnorm(w);
            penalty += inv_q * norm;
            // Group-lasso subgradient: zero at the origin.
            if (norm > 1e-12) v.grad->add(n, w * (lambda * inv_q / norm));
        }
    }
    return penalty;
}

double reg_rql(ParamSet& params, double lambda) {
    return reg_rq(params, lambda) + reg_l1_elem(params, lambda);
}

double reg_bn_gamma(ParamSet& params, double lambda) {
    std::size_t count = 0;
    for (const auto& v : params.real)
        if (v.bn_gamma) count += v.value->size();
    if (count == 0)
        throw ConfigError("batch-norm scale penalty: the model has no batch-norm layers");
    const double inv = 1.0 / static_cast<double>(count);
    double penalty = 0.0;
    for (auto& v : params.real) {
        if (!v.bn_gamma) continue;
        for (std::size_t n = 0; n < v.value->size(); ++n) {
            const double g = (*v.value)[n];
            penalty += inv * std::abs(g);
            if (g > 0.0)
                (*v.grad)[n] += lambda * inv;
            else if (g < 0.0)
                (*v.grad)[n] -= lambda * inv;
        }
    }
    return penalty;
}

double apply_regularizer(ParamSet& params, const RegConfig& cfg) {
    switch (cfg.kind) {
        case RegKind::None: return 0.0;
        case RegKind::L2Elem: return reg_l2_elem(params, cfg.lambda);
        case RegKind::L1Elem: return reg_l1_elem(params, cfg.lambda);
        case RegKind::RQ: return reg_rq(params, cfg.lambda);
        case RegKind::RQL: return reg_rql(params, cfg.lambda);
        case RegKind::BnGammaL1: return reg_bn_gamma(params, cfg.lambda);
        case RegKind::RQBnGammaL1: return reg_rq(params, cfg.lambda) + reg_bn_gamma(params, cfg.lambda);
    }
    return 0.0;
}

// ---- sparsity metrics ----------------------------------------------------------------

namespace {

// Structural parameter/MAC counts for the channel-liveness implied by BN scales at
// threshold tau (or with every channel live when tau < 0). Liveness only changes at a
// batch-norm layer and masks the output channels of the convolution directly before it.
struct LiveCounts {
    std::size_t params = 0;
    std::size_t macs = 0;
};

LiveCounts live_counts(const Model& model, double tau) {
    if (model.input_shape.size() != 3) throw StateError("sparsity: model input shape is not set");
    std::size_t H = model.input_shape[1], W = model.input_shape[2];
    std::vector<char> live(model.input_shape[0], 1);
    bool flat = false;
    std::vector<char> live_feats;

    struct ConvRec {
        std::size_t in_live, k2, oh, ow;
        std::size_t out_live;  // finalized after a following batch norm
        bool dense;
    };
    std::vector<ConvRec> recs;
    LiveCounts out;

    auto live_count = [](const std::vector<char>& v) {
        std::size_t n = 0;
        for (char c : v) n += c ? 1 : 0;
        return n;
    };

    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const Layer& l = *model.layers[li];
        switch (l.kind()) {
            case LayerKind::Conv2d: {
                const auto& cv = static_cast<const QConv2dLayer&>(l);
                const std::size_t oh = (H + 2 * cv.padding() - cv.kernel_h()) / cv.stride() + 1;
                const std::size_t ow = (W + 2 * cv.padding() - cv.kernel_w()) / cv.stride() + 1;
                recs.push_back({live_count(live), cv.kernel_h() * cv.kernel_w(), oh, ow, cv.out_channels(), false});
                live.assign(cv.out_channels(), 1);
                H = oh;
                W = ow;
                break;
            }
            case LayerKind::BatchNorm: {
                const auto& bn = static_cast<const QBatchNormLayer&>(l);
                for (std::size_t c = 0; c < bn.channels(); ++c)
                    if (tau >= 0.0 && std::abs(bn.gamma[c]) < tau) live[c] = 0;
                if (!recs.empty() && !recs.back().dense) recs.back().out_live = live_count(live);
                // beta survives per live channel
                out.params += live_count(live);
                break;
            }
            case LayerKind::MaxPool: {
                const auto& p = static_cast<const QMaxPoolLayer&>(l);
                H = (H - p.window()) / p.stride() + 1;
                W = (W - p.window()) / p.stride() + 1;
                break;
            }
            case LayerKind::Dense: {
                const auto& d = static_cast<const QDenseLayer&>(l);
                std::size_t in_live = 0;
                if (flat) {
                    for (char c : live_feats) in_live += c ? 1 : 0;
                } else {
                    in_live = live_count(live) * H * W;
                }
                recs.push_back({in_live, 1, 1, 1, d.out_features(), true});
                flat = true;
                live_feats.assign(d.out_features(), 1);
                break;
            }
            case LayerKind::Activation:
            case LayerKind::Dropout:
            case LayerKind::Head:
                break;
        }
    }

    for (const auto& r : recs) {
        out.params += r.in_live * r.k2 * r.out_live + r.out_live;  // kernels/weights + bias
        out.macs += r.in_live * r.k2 * r.out_live * r.oh * r.ow;
    }
    return out;
}

}  // namespace

SparsityReport sparsity_report(Model& model, double tau) {
    if (tau <= 0.0) throw ConfigError("sparsity: threshold must be positive");
    SparsityReport rep;

    ParamSet params = model.params();
    std::size_t components = 0, zero_components = 0, quats = 0, zero_quats = 0;
    for (const auto& v : params.quat) {
        if (!v.penalized) continue;
        for (std::size_t n = 0; n < v.value->numel(); ++n) {
            const Quaternion w = v.value->at(n);
            const bool z0 = std::abs(w.r) < tau, z1 = std::abs(w.i) < tau, z2 = std::abs(w.j) < tau,
                       z3 = std::abs(w.k) < tau;
            zero_components += static_cast<std::size_t>(z0) + z1 + z2 + z3;
            zero_quats += (z0 && z1 && z2 && z3) ? 1 : 0;
        }
        quats += v.value->numel();
        components += 4 * v.value->numel();
    }
    if (components > 0) {
        rep.component_sparsity = static_cast<double>(zero_components) / static_cast<double>(components);
        rep.quaternion_sparsity = static_cast<double>(zero_quats) / static_cast<double>(quats);
    }

    std::size_t gammas = 0, dead_gammas = 0;
    for (const auto& v : params.real) {
        if (!v.bn_gamma) continue;
        for (double g : *v.value) {
            ++gammas;
            if (std::abs(g) < tau) ++dead_gammas;
        }
    }
    if (gammas > 0) rep.neuron_sparsity = static_cast<double>(dead_gammas) / static_cast<double>(gammas);

    const LiveCounts at_tau = live_counts(model, tau);
    const LiveCounts full = live_counts(model, -1.0);
    rep.live_params = at_tau.params;
    rep.live_macs = at_tau.macs;
    rep.total_params = full.params;
    rep.total_macs = full.macs;
    return rep;
}

// ---- structural pruning --------------------------------------------------------------

namespace {

Quaternion relu_const(const Quaternion& q) {
    return {q.r > 0.0 ? q.r : 0.0, q.i > 0.0 ? q.i : 0.0, q.j > 0.0 ? q.j : 0.0, q.k > 0.0 ? q.k : 0.0};
}

}  // namespace

Model prune_gamma(const Model& model, double tau) {
    if (tau <= 0.0) throw ConfigError("prune: threshold must be positive");
    bool has_bn = false;
    for (const auto& l : model.layers) has_bn = has_bn || l->kind() == LayerKind::BatchNorm;
    if (!has_bn) throw ConfigError("prune: the model has no batch-norm layers to prune by");
    if (model.input_shape.size() != 3) throw StateError("prune: model input shape is not set");

    Model out = model;
    std::size_t H = model.input_shape[1], W = model.input_shape[2];

    // Stream bookkeeping between a pruned batch norm and the next parameterized layer:
    // `keep` maps surviving channel slots to the consumer's original input-channel
    // indices, and `removed` carries each dead channel's constant inference output.
    std::vector<std::size_t> keep;
    std::vector<std::pair<std::size_t, Quaternion>> removed;
    for (std::size_t c = 0; c < model.input_shape[0]; ++c) keep.push_back(c);

    for (std::size_t li = 0; li < out.layers.size(); ++li) {
        Layer& l = *out.layers[li];
        switch (l.kind()) {
            case LayerKind::Conv2d: {
                auto& cv = static_cast<QConv2dLayer&>(l);
                if (!removed.empty() || keep.size() != cv.in_channels()) {
                    QConv2dLayer shrunk(cv.out_channels(), keep.size(), cv.kernel_h(), cv.kernel_w(), cv.stride(),
                                        cv.padding());
                    shrunk.set_name(cv.name());
                    const std::size_t k2 = cv.kernel_h() * cv.kernel_w();
                    const std::size_t in_c = cv.in_channels();
                    for (std::size_t o = 0; o < cv.out_channels(); ++o) {
                        for (std::size_t c2 = 0; c2 < keep.size(); ++c2)
                            for (std::size_t t = 0; t < k2; ++t)
                                shrunk.kernels.set((o * keep.size() + c2) * k2 + t,
                                                   cv.kernels.at((o * in_c + keep[c2]) * k2 + t));
                        Quaternion bias = cv.b.at(o);
                        for (const auto& [c, value] : removed)
                            for (std::size_t t = 0; t < k2; ++t)
                                bias = bias + hamilton_mul(cv.kernels.at((o * in_c + c) * k2 + t), value);
                        shrunk.b.set(o, bias);
                    }
                    out.layers[li] = std::make_unique<QConv2dLayer>(std::move(shrunk));
                }
                const auto& ncv = static_cast<const QConv2dLayer&>(*out.layers[li]);
                H = (H + 2 * ncv.padding() - ncv.kernel_h()) / ncv.stride() + 1;
                W = (W + 2 * ncv.padding() - ncv.kernel_w()) / ncv.stride() + 1;
                keep.clear();
                for (std::size_t c = 0; c < ncv.out_channels(); ++c) keep.push_back(c);
                removed.clear();
                break;
            }
            case LayerKind::BatchNorm: {
                auto& bn = static_cast<QBatchNormLayer&>(l);
                if (li == 0 || out.layers[li - 1]->kind() != LayerKind::Conv2d)
                    throw ConfigError("prune: batch norm must directly follow a convolution");
                auto& cv = static_cast<QConv2dLayer&>(*out.layers[li - 1]);
                if (bn.channels() != cv.out_channels())
                    throw ShapeError("prune: batch-norm width does not match the producing convolution");

                std::vector<std::size_t> alive;
                removed.clear();
                for (std::size_t c = 0; c < bn.channels(); ++c) {
                    if (std::abs(bn.gamma[c]) < tau)
                        removed.emplace_back(c, bn.beta.at(c));
                    else
                        alive.push_back(c);
                }
                if (alive.empty())
                    throw ConfigError("prune: every channel of " + bn.name() +
                                      " falls below the threshold; at least one must survive");
                if (removed.empty()) {
                    keep.clear();
                    for (std::size_t c = 0; c < bn.channels(); ++c) keep.push_back(c);
                    break;
                }

                // Shrink the producer's output side.
                QConv2dLayer shrunk(alive.size(), cv.in_channels(), cv.kernel_h(), cv.kernel_w(), cv.stride(),
                                    cv.padding());
                shrunk.set_name(cv.name());
                const std::size_t k2 = cv.kernel_h() * cv.kernel_w();
                const std::size_t per_out = cv.in_channels() * k2;
                for (std::size_t o2 = 0; o2 < alive.size(); ++o2) {
                    for (std::size_t t = 0; t < per_out; ++t)
                        shrunk.kernels.set(o2 * per_out + t, cv.kernels.at(alive[o2] * per_out + t));
                    shrunk.b.set(o2, cv.b.at(alive[o2]));
                }
                out.layers[li - 1] = std::make_unique<QConv2dLayer>(std::move(shrunk));

                QBatchNormLayer nbn(alive.size(), bn.epsilon(), bn.momentum());
                nbn.set_name(bn.name());
                for (std::size_t c2 = 0; c2 < alive.size(); ++c2) {
                    nbn.gamma[c2] = bn.gamma[alive[c2]];
                    nbn.beta.set(c2, bn.beta.at(alive[c2]));
                    nbn.running_mu.set(c2, bn.running_mu.at(alive[c2]));
                    nbn.running_var[c2] = bn.running_var[alive[c2]];
                }
                out.layers[li] = std::make_unique<QBatchNormLayer>(std::move(nbn));

                // Survivors and dead channels both keep their original index into the
                // consumer's kernel slices.
                keep = alive;
                break;
            }
            case LayerKind::Activation: {
                for (auto& [c, value] : removed) value = relu_const(value);
                break;
            }
            case LayerKind::MaxPool: {
                const auto& p = static_cast<const QMaxPoolLayer&>(l);
                H = (H - p.window()) / p.stride() + 1;
                W = (W - p.window()) / p.stride() + 1;
                break;
            }
            case LayerKind::Dense: {
                auto& d = static_cast<QDenseLayer&>(l);
                const std::size_t hw = H * W;
                const std::size_t in_c = keep.size() + removed.size();
                const std::size_t outf = d.out_features();
                if (d.in_features() != in_c * hw)
                    throw ShapeError("prune: dense input width " + std::to_string(d.in_features()) +
                                     " does not match the stream (" + std::to_string(in_c * hw) + ")");
                if (!removed.empty()) {
                    QDenseLayer shrunk(outf, keep.size() * hw);
                    shrunk.set_name(d.name());
                    for (std::size_t p = 0; p < outf; ++p) {
                        for (std::size_t c2 = 0; c2 < keep.size(); ++c2)
                            for (std::size_t t = 0; t < hw; ++t)
                                shrunk.W.set(p * (keep.size() * hw) + c2 * hw + t,
                                             d.W.at(p * d.in_features() + keep[c2] * hw + t));
                        Quaternion bias = d.b.at(p);
                        for (const auto& [c, value] : removed)
                            for (std::size_t t = 0; t < hw; ++t)
                                bias = bias + hamilton_mul(d.W.at(p * d.in_features() + c * hw + t), value);
                        shrunk.b.set(p, bias);
                    }
                    out.layers[li] = std::make_unique<QDenseLayer>(std::move(shrunk));
                }
                removed.clear();
                keep.clear();
                for (std::size_t p = 0; p < outf; ++p) keep.push_back(p);
                H = 1;
                W = 1;
                break;
            }
            case LayerKind::Dropout:
            case LayerKind::Head:
                break;
        }
    }
    if (!removed.empty())
        throw ConfigError("prune: dead channels reach the network output with no layer to fold their shift into");
    return out;
}

}  // namespace qvnn
