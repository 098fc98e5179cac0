#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qvnn/data.hpp"
#include "qvnn/model.hpp"
#include "qvnn/regularizers.hpp"

namespace qvnn {

// Bias-corrected Adam applied independently to every real component (all four planes
// of each quaternion parameter, plus the real batch-norm scales).
struct AdamState {
    double alpha = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::size_t t = 0;
    std::vector<QTensor> m_quat, v_quat;
    std::vector<std::vector<double>> m_real, v_real;
    bool ready = false;
};

void adam_init(AdamState& state, const ParamSet& params);

// One update from the gradients accumulated in `params`. Non-finite gradients abort
// with an error naming the offending parameter.
void adam_step(AdamState& state, ParamSet& params);

struct TrainConfig {
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    RegConfig reg;
    std::uint64_t seed = 0;
    double dropout = -1.0;    // negative keeps each layer's configured rate
    std::size_t subset = 0;   // 0 trains on the full set, else on the first `subset` samples
    std::string metrics_csv;  // written with one flushed row per epoch when non-empty
    bool timing = true;       // false writes wall_seconds as 0 for byte-reproducible logs
};

struct EpochMetrics {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;  // mean objective loss + lambda * r(theta) over the epoch
    double test_acc = 0.0;
    double component_sparsity = 0.0;
    double quaternion_sparsity = 0.0;
    double neuron_sparsity = 0.0;
    double wall_seconds = 0.0;
};

// Mini-batch Adam on mean cross-entropy plus lambda * r(theta). Shuffling and dropout
// draw from one generator seeded by cfg.seed, so a seed fixes the whole run.
std::vector<EpochMetrics> train(Model& model, const Dataset& train_data, const Dataset& test_data,
                                const TrainConfig& cfg);

// Fraction of argmax-correct predictions, inference mode.
double evaluate(Model& model, const Dataset& data);

}  // namespace qvnn
