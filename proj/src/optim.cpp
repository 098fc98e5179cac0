#include "qvnn/optim.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "qvnn/error.hpp"

namespace qvnn {

void adam_init(AdamState& state, const ParamSet& params) {
    state.t = 0;
    state.m_quat.clear();
    state.v_quat.clear();
    state.m_real.clear();
    state.v_real.clear();
    for (const auto& v : params.quat) {
        state.m_quat.emplace_back(v.value->shape);
        state.v_quat.emplace_back(v.value->shape);
    }
    for (const auto& v : params.real) {
        state.m_real.emplace_back(v.value->size(), 0.0);
        state.v_real.emplace_back(v.value->size(), 0.0);
    }
    state.ready = true;
}

namespace {

void adam_update(double* w, const double* g, double* m, double* v, std::size_t n, const AdamState& st, double bc1,
                 double bc2) {
    for (std::size_t e = 0; e < n; ++e) {
        m[e] = st.beta1 * m[e] + (1.0 - st.beta1) * g[e];
        v[e] = st.beta2 * v[e] + (1.0 - st.beta2) * g[e] * g[e];
        const double mhat = m[e] / bc1;
        const double vhat = v[e] / bc2;
        w[e] -= st.alpha * mhat / (std::sqrt(vhat) + st.eps);
    }
}

void check_finite(const double* g, std::size_t n, const std::string& name) {
    for (std::size_t e = 0; e < n; ++e)
        if (!std::isfinite(g[e])) throw NumericError("adam: non-finite gradient in " + name);
}

}  // namespace

void adam_step(AdamState& state, ParamSet& params) {
    if (!state.ready) adam_init(state, params);
    if (state.m_quat.size() != params.quat.size() || state.m_real.size() != params.real.size())
        throw ShapeError("adam: state does not match the parameter set");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));

    for (std::size_t p = 0; p < params.quat.size(); ++p) {
        auto& view = params.quat[p];
        if (!state.m_quat[p].same_shape(*view.value))
            throw ShapeError("adam: moment shape does not match parameter " + view.name);
        const std::size_t n = view.value->numel();
        for (int c = 0; c < 4; ++c) {
            check_finite(view.grad->plane(c), n, view.name);
            adam_update(view.value->plane(c), view.grad->plane(c), state.m_quat[p].plane(c), state.v_quat[p].plane(c),
                        n, state, bc1, bc2);
        }
    }
    for (std::size_t p = 0; p < params.real.size(); ++p) {
        auto& view = params.real[p];
        if (state.m_real[p].size() != view.value->size())
            throw ShapeError("adam: moment shape does not match parameter " + view.name);
        check_finite(view.grad->data(), view.grad->size(), view.name);
        adam_update(view.value->data(), view.grad->data(), state.m_real[p].data(), state.v_real[p].data(),
                    view.value->size(), state, bc1, bc2);
    }
}

double evaluate(Model& model, const Dataset& data) {
    constexpr std::size_t kBatch = 128;
    RngStream rng(0);  // inference draws nothing
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += kBatch) {
        const std::size_t count = std::min(kBatch, data.size() - start);
        idx.resize(count);
        std::iota(idx.begin(), idx.end(), start);
        const RealMatrix probs = model.forward(data.gather(idx), Pass::Infer, rng);
        for (std::size_t b = 0; b < count; ++b) {
            const double* row = probs.row(b);
            std::size_t best = 0;
            for (std::size_t c = 1; c < probs.cols; ++c)
                if (row[c] > row[best]) best = c;
            if (static_cast<int>(best) == data.labels[start + b]) ++correct;
        }
    }
    return data.size() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

void validate_reg_applicability(Model& model, const RegConfig& reg) {
    ParamSet params = model.params();
    const bool needs_weights = reg.kind == RegKind::L1Elem || reg.kind == RegKind::L2Elem ||
                               reg.kind == RegKind::RQ || reg.kind == RegKind::RQL ||
                               reg.kind == RegKind::RQBnGammaL1;
    const bool needs_gamma = reg.kind == RegKind::BnGammaL1 || reg.kind == RegKind::RQBnGammaL1;
    if (needs_weights && params.penalized_quat_count() == 0)
        throw ConfigError("train: weight penalty configured but the model has no penalized weights");
    if (needs_gamma) {
        std::size_t gammas = 0;
        for (const auto& v : params.real)
            if (v.bn_gamma) gammas += v.value->size();
        if (gammas == 0) throw ConfigError("train: batch-norm scale penalty configured but the model has no batch-norm layers");
    }
}

}  // namespace

std::vector<EpochMetrics> train(Model& model, const Dataset& train_data, const Dataset& test_data,
                                const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("train: epochs must be at least 1");
    if (cfg.batch_size < 1) throw ConfigError("train: batch size must be at least 1");
    if (cfg.lr <= 0.0) throw ConfigError("train: learning rate must be positive");
    if (cfg.reg.lambda < 0.0) throw ConfigError("train: lambda must be non-negative");
    if (train_data.size() == 0) throw DataError("train: training set is empty");
    train_data.validate();
    test_data.validate();
    validate_reg_applicability(model, cfg.reg);

    if (cfg.dropout >= 0.0) model.set_dropout(cfg.dropout);
    const std::size_t n = cfg.subset > 0 ? std::min(cfg.subset, train_data.size()) : train_data.size();

    RngStream rng(cfg.seed);
    AdamState adam;
    adam.alpha = cfg.lr;

    std::ofstream csv;
    if (!cfg.metrics_csv.empty()) {
        csv.open(cfg.metrics_csv, std::ios::trunc);
        if (!csv) throw ConfigError("train: cannot open metrics file " + cfg.metrics_csv);
        csv << "# arch=" << model.arch << " reg=" << reg_kind_name(cfg.reg.kind) << " lambda=" << cfg.reg.lambda
            << " seed=" << cfg.seed << " pixel_scale=1/255\n";
        csv << "epoch,train_loss,test_acc,component_sparsity,quaternion_sparsity,neuron_sparsity,wall_seconds\n";
        csv.flush();
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<EpochMetrics> metrics;
    char buf[64];

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        rng.shuffle(order);

        double loss_sum = 0.0;
        std::vector<std::size_t> batch;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, n - start);
            batch.assign(order.begin() + start, order.begin() + start + count);
            const QTensor x = train_data.gather(batch);
            std::vector<int> labels(count);
            for (std::size_t b = 0; b < count; ++b) labels[b] = train_data.labels[batch[b]];

            model.zero_grad();
            model.forward(x, Pass::Train, rng);
            const double batch_loss = model.loss(labels);
            model.backward_xent(labels);

            ParamSet params = model.params();
            const double r = apply_regularizer(params, cfg.reg);
            adam_step(adam, params);

            loss_sum += static_cast<double>(count) * (batch_loss + cfg.reg.lambda * r);
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = loss_sum / static_cast<double>(n);
        em.test_acc = evaluate(model, test_data);
        const SparsityReport rep = sparsity_report(model, cfg.reg.threshold);
        em.component_sparsity = rep.component_sparsity;
        em.quaternion_sparsity = rep.quaternion_sparsity;
        em.neuron_sparsity = rep.neuron_sparsity;
        if (cfg.timing) {
            const auto t1 = std::chrono::steady_clock::now();
            em.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
        }
        metrics.push_back(em);

        if (csv.is_open()) {
            csv << em.epoch;
            for (double v : {em.train_loss, em.test_acc, em.component_sparsity, em.quaternion_sparsity,
                             em.neuron_sparsity, em.wall_seconds}) {
                std::snprintf(buf, sizeof buf, "%.9g", v);
                csv << ',' << buf;
            }
            csv << '\n';
            csv.flush();
        }
    }
    return metrics;
}

}  // namespace qvnn
