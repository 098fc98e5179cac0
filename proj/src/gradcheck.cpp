#include "qvnn/gradcheck.hpp"

#include <cmath>
#include <limits>

#include "qvnn/error.hpp"

namespace qvnn {

GradCheckResult finite_diff_check(Model& model, const QTensor& input, const std::vector<int>& labels,
                                  double epsilon) {
    if (epsilon <= 0.0) throw ConfigError("gradcheck: epsilon must be positive");
    for (const auto& l : model.layers)
        if (l->kind() == LayerKind::Dropout && static_cast<const QDropoutLayer&>(*l).p() > 0.0)
            throw ConfigError("gradcheck: disable dropout (set rate 0) so the loss is deterministic");

    RngStream rng(0);  // never drawn from: dropout is off and no other layer is stochastic
    auto eval_loss = [&]() {
        model.forward(input, Pass::Train, rng);
        return model.loss(labels);
    };

    model.zero_grad();
    model.forward(input, Pass::Train, rng);
    const double base_loss = model.loss(labels);
    model.backward_xent(labels);

    // Flatten addresses of every real component and its analytic gradient.
    ParamSet params = model.params();
    std::vector<double*> values;
    std::vector<double> analytic;
    for (auto& v : params.quat)
        for (int c = 0; c < 4; ++c) {
            double* val = v.value->plane(c);
            const double* grd = v.grad->plane(c);
            for (std::size_t n = 0; n < v.value->numel(); ++n) {
                values.push_back(val + n);
                analytic.push_back(grd[n]);
            }
        }
    for (auto& v : params.real)
        for (std::size_t n = 0; n < v.value->size(); ++n) {
            values.push_back(v.value->data() + n);
            analytic.push_back((*v.grad)[n]);
        }

    GradCheckResult res;
    const double kink_gate = std::pow(epsilon, 1.5);
    // Central differences cannot resolve slopes below the rounding noise of the loss,
    // about |L| * machine-eps / epsilon. Components where both estimates sit under a
    // generous multiple of that are unmeasurable at this epsilon, not wrong.
    const double noise_floor = 1000.0 * std::abs(base_loss) * std::numeric_limits<double>::epsilon() / epsilon;
    for (std::size_t m = 0; m < values.size(); ++m) {
        double* theta = values[m];
        const double orig = *theta;
        *theta = orig + epsilon;
        const double lp = eval_loss();
        *theta = orig - epsilon;
        const double lm = eval_loss();
        *theta = orig;

        if (std::abs(lp + lm - 2.0 * base_loss) > kink_gate) {
            ++res.excluded;
            continue;
        }
        const double fd = (lp - lm) / (2.0 * epsilon);
        const double a = analytic[m];
        if (std::max(std::abs(fd), std::abs(a)) < noise_floor) {
            ++res.excluded;
            continue;
        }
        const double rel = std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-8});
        if (rel > res.max_rel_error) res.max_rel_error = rel;
        ++res.checked;
    }
    return res;
}

}  // namespace qvnn
