#include <doctest.h>

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "qvnn/error.hpp"
#include "qvnn/model.hpp"
#include "qvnn/presets.hpp"
#include "qvnn/regularizers.hpp"
#include "qvnn/rng.hpp"

using namespace qvnn;

namespace {

// One penalized quaternion weight bank plus an optional BN scale vector, with
// gradient buffers, usable as a standalone ParamSet.
struct Bank {
    QTensor w, gw;
    std::vector<double> gamma, ggamma;

    explicit Bank(std::size_t n, std::size_t n_gamma = 0)
        : w({n}), gw({n}), gamma(n_gamma, 0.0), ggamma(n_gamma, 0.0) {}

    ParamSet params() {
        ParamSet ps;
        ps.quat.push_back({"w", &w, &gw, true});
        if (!gamma.empty()) ps.real.push_back({"gamma", &gamma, &ggamma, true});
        return ps;
    }

    void zero_grad() {
        gw.zero();
        std::fill(ggamma.begin(), ggamma.end(), 0.0);
    }
};

Quaternion random_quat(RngStream& rng, double lo = -1.0, double hi = 1.0) {
    return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

// Draws a component uniform in [-1,1] but bounded away from zero, keeping every
// penalty smooth at the sampled point.
double smooth_coord(RngStream& rng) {
    const double mag = rng.uniform(0.05, 1.0);
    return rng.uniform() < 0.5 ? -mag : mag;
}

// Finite-difference check of an accumulated subgradient at a smooth point.
void check_subgrad_fd(Bank& bank, const std::function<double(ParamSet&, double)>& reg, double tol) {
    ParamSet ps = bank.params();
    bank.zero_grad();
    reg(ps, 1.0);

    const double eps = 1e-6;
    auto value = [&]() {
        ParamSet fresh = bank.params();
        Bank scratch(bank.w.numel(), bank.gamma.size());
        // route gradient accumulation into scratch buffers so probes are pure
        fresh.quat[0].grad = &scratch.gw;
        if (!fresh.real.empty()) fresh.real[0].grad = &scratch.ggamma;
        return reg(fresh, 0.0);
    };

    for (int c = 0; c < 4; ++c) {
        double* w = bank.w.plane(c);
        const double* g = bank.gw.plane(c);
        for (std::size_t n = 0; n < bank.w.numel(); ++n) {
            const double keep = w[n];
            w[n] = keep + eps;
            const double lp = value();
            w[n] = keep - eps;
            const double lm = value();
            w[n] = keep;
            const double fd = (lp - lm) / (2 * eps);
            CHECK(std::abs(fd - g[n]) / std::max({std::abs(fd), std::abs(g[n]), 1e-8}) <= tol);
        }
    }
    for (std::size_t n = 0; n < bank.gamma.size(); ++n) {
        const double keep = bank.gamma[n];
        bank.gamma[n] = keep + eps;
        const double lp = value();
        bank.gamma[n] = keep - eps;
        const double lm = value();
        bank.gamma[n] = keep;
        const double fd = (lp - lm) / (2 * eps);
        CHECK(std::abs(fd - bank.ggamma[n]) / std::max({std::abs(fd), std::abs(bank.ggamma[n]), 1e-8}) <= tol);
    }
}

}  // namespace

TEST_SUITE("regularizers") {

TEST_CASE("elementwise l1 worked examples") {
    Bank b(1);
    b.w.set(0, {1, -2, 3, -4});
    ParamSet ps = b.params();
    CHECK(reg_l1_elem(ps, 2.0) == doctest::Approx(10).epsilon(1e-15));
    CHECK(b.gw.at(0).r == 2.0);   // lambda * sign
    CHECK(b.gw.at(0).i == -2.0);
    CHECK(b.gw.at(0).j == 2.0);
    CHECK(b.gw.at(0).k == -2.0);

    Bank z(3);
    ParamSet zs = z.params();
    CHECK(reg_l1_elem(zs, 1.0) == 0.0);
    for (std::size_t n = 0; n < 3; ++n) CHECK(qnorm(z.gw.at(n)) == 0.0);

    Bank two(2);
    two.w.set(0, {1, 0, 0, 0});
    two.w.set(1, {0, -1, 0, 0});
    ParamSet ts = two.params();
    CHECK(reg_l1_elem(ts, 1.0) == doctest::Approx(2).epsilon(1e-15));
}

TEST_CASE("elementwise squared-l2 worked examples") {
    Bank b(1);
    b.w.set(0, {3, 0, 4, 0});
    ParamSet ps = b.params();
    CHECK(reg_l2_elem(ps, 1.0) == doctest::Approx(12.5).epsilon(1e-15));
    CHECK(qnorm(b.gw.at(0) - Quaternion{3, 0, 4, 0}) == 0.0);

    Bank z(2);
    ParamSet zs = z.params();
    CHECK(reg_l2_elem(zs, 1.0) == 0.0);
}

TEST_CASE("quaternion-norm penalty worked examples") {
    Bank b(1);
    b.w.set(0, {3, 0, 4, 0});
    ParamSet ps = b.params();
    CHECK(reg_rq(ps, 1.0) == doctest::Approx(5).epsilon(1e-15));  // Q=1
    CHECK(qnorm(b.gw.at(0) - Quaternion{0.6, 0, 0.8, 0}) <= 1e-15);

    Bank two(2);
    two.w.set(0, {3, 0, 4, 0});
    ParamSet ts = two.params();
    CHECK(reg_rq(ts, 1.0) == doctest::Approx(2.5).epsilon(1e-15));  // Q=2, zero weight adds nothing
    CHECK(qnorm(two.gw.at(1)) == 0.0);  // subgradient at the origin is zero
}

TEST_CASE("quaternion-norm penalty requires penalized weights") {
    Bank b(2);
    ParamSet ps = b.params();
    ps.quat[0].penalized = false;
    CHECK_THROWS_AS(reg_rq(ps, 1.0), ConfigError);
}

TEST_CASE("combined norm plus l1 penalty worked examples") {
    Bank b(1);
    b.w.set(0, {3, 0, 4, 0});
    ParamSet ps = b.params();
    CHECK(reg_rql(ps, 1.0) == doctest::Approx(12).epsilon(1e-14));  // 5 + 7

    Bank z(2);
    ParamSet zs = z.params();
    CHECK(reg_rql(zs, 1.0) == 0.0);
}

TEST_CASE("batch-norm scale penalty worked examples") {
    Bank b(1, 3);
    b.gamma = {1.0, -0.5, 0.0};
    ParamSet ps = b.params();
    CHECK(reg_bn_gamma(ps, 1.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(b.ggamma[0] == doctest::Approx(1.0 / 3).epsilon(1e-15));
    CHECK(b.ggamma[1] == doctest::Approx(-1.0 / 3).epsilon(1e-15));
    CHECK(b.ggamma[2] == 0.0);

    Bank init(1, 5);
    std::fill(init.gamma.begin(), init.gamma.end(), 1.0);
    ParamSet is = init.params();
    CHECK(reg_bn_gamma(is, 1.0) == doctest::Approx(1.0).epsilon(1e-15));

    Bank none(1);
    ParamSet ns = none.params();
    CHECK_THROWS_AS(reg_bn_gamma(ns, 1.0), ConfigError);
}

TEST_CASE("penalties are non-negative and zero only at the origin") {
    RngStream rng(70);
    for (int rep = 0; rep < 50; ++rep) {
        Bank b(4, 3);
        for (std::size_t n = 0; n < 4; ++n) b.w.set(n, random_quat(rng));
        for (double& g : b.gamma) g = rng.uniform(-1, 1);
        double wmag = 0;
        for (std::size_t n = 0; n < 4; ++n) wmag += qnorm(b.w.at(n));
        double gmag = 0;
        for (double g : b.gamma) gmag += std::abs(g);

        Bank scratch(4, 3);
        ParamSet ps = b.params();
        ps.quat[0].grad = &scratch.gw;
        ps.real[0].grad = &scratch.ggamma;
        const double l1 = reg_l1_elem(ps, 0.0), l2 = reg_l2_elem(ps, 0.0), rq = reg_rq(ps, 0.0),
                     rql = reg_rql(ps, 0.0), bng = reg_bn_gamma(ps, 0.0);
        CHECK(l1 >= 0.0);
        CHECK(l2 >= 0.0);
        CHECK(rq >= 0.0);
        CHECK(rql >= 0.0);
        CHECK(bng >= 0.0);
        CHECK((l1 == 0.0) == (wmag == 0.0));
        CHECK((l2 == 0.0) == (wmag == 0.0));
        CHECK((rq == 0.0) == (wmag == 0.0));
        CHECK((bng == 0.0) == (gmag == 0.0));
    }
}

TEST_CASE("quaternion-norm penalty is invariant to sign flips and imaginary permutations") {
    RngStream rng(71);
    Bank a(3), b(3);
    for (std::size_t n = 0; n < 3; ++n) {
        const Quaternion q = random_quat(rng);
        a.w.set(n, q);
        b.w.set(n, n == 1 ? Quaternion{q.r, q.k, q.i, q.j} : -q);  // permute one, flip the others
    }
    Bank sa(3), sb(3);
    ParamSet pa = a.params(), pb = b.params();
    pa.quat[0].grad = &sa.gw;
    pb.quat[0].grad = &sb.gw;
    CHECK(reg_rq(pa, 0.0) == doctest::Approx(reg_rq(pb, 0.0)).epsilon(1e-14));
}

TEST_CASE("subgradients match finite differences at random smooth points") {
    RngStream rng(72);
    using RegFn = double (*)(ParamSet&, double);
    const RegFn regs[] = {reg_l1_elem, reg_l2_elem, reg_rq, reg_rql, reg_bn_gamma};
    for (RegFn reg : regs) {
        for (int rep = 0; rep < 60; ++rep) {
            Bank b(3, 2);
            for (std::size_t n = 0; n < 3; ++n)
                b.w.set(n, {smooth_coord(rng), smooth_coord(rng), smooth_coord(rng), smooth_coord(rng)});
            for (double& g : b.gamma) g = smooth_coord(rng);
            check_subgrad_fd(b, reg, 1e-6);
        }
    }
}

TEST_CASE("dispatcher applies the configured penalty and none is free") {
    RngStream rng(73);
    Model m = make_preset("mnist-qcnn-bn", 3);
    ParamSet ps = m.params();
    m.zero_grad();

    RegConfig none{RegKind::None, 0.5, 1e-3};
    CHECK(apply_regularizer(ps, none) == 0.0);
    for (const auto& v : ps.quat)
        for (std::size_t n = 0; n < v.grad->numel(); ++n) CHECK(qnorm(v.grad->at(n)) == 0.0);

    // the combined kind equals the sum of its parts on fresh gradient buffers
    RegConfig combo{RegKind::RQBnGammaL1, 1.0, 1e-3};
    const double total = apply_regularizer(ps, combo);
    m.zero_grad();
    const double rq = reg_rq(ps, 1.0);
    m.zero_grad();
    const double bng = reg_bn_gamma(ps, 1.0);
    CHECK(total == doctest::Approx(rq + bng).epsilon(1e-12));
}

TEST_CASE("regularizer names round-trip") {
    for (const char* name : {"none", "l2", "l1", "rq", "rql", "bn-l1", "rq+bn-l1"})
        CHECK(reg_kind_name(parse_reg_kind(name)) == name);
    CHECK_THROWS_WITH_AS(parse_reg_kind("dropconnect"), doctest::Contains("valid:"), ConfigError);
}

TEST_CASE("sparsity worked examples") {
    // all weights zero
    Model m;
    m.arch = "tiny";
    m.input_shape = {1, 1, 1};
    m.num_classes = 2;
    m.add(std::make_unique<QDenseLayer>(2, 1));
    SparsityReport all_zero = sparsity_report(m, 1e-3);
    CHECK(all_zero.component_sparsity == 1.0);
    CHECK(all_zero.quaternion_sparsity == 1.0);
    CHECK(all_zero.neuron_sparsity == 0.0);  // no batch norm present

    // single weight (1,0,0,0): three of four components below tau, quaternion alive
    Model s;
    s.arch = "tiny";
    s.input_shape = {1, 1, 1};
    s.num_classes = 1;
    auto d = std::make_unique<QDenseLayer>(1, 1);
    d->W.set(0, {1, 0, 0, 0});
    s.add(std::move(d));
    SparsityReport one = sparsity_report(s, 1e-3);
    CHECK(one.component_sparsity == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(one.quaternion_sparsity == 0.0);

    CHECK_THROWS_AS(sparsity_report(s, 0.0), ConfigError);
}

TEST_CASE("quaternion sparsity never exceeds component sparsity") {
    RngStream rng(74);
    for (int rep = 0; rep < 10; ++rep) {
        Model m = make_preset("mnist-qcnn", rep);
        // push a random subset of components under the threshold
        for (auto& v : m.params().quat) {
            if (!v.penalized) continue;
            for (int c = 0; c < 4; ++c) {
                double* w = v.value->plane(c);
                for (std::size_t n = 0; n < v.value->numel(); ++n)
                    if (rng.uniform() < 0.4) w[n] = rng.uniform(-5e-4, 5e-4);
            }
        }
        const SparsityReport rep_ = sparsity_report(m, 1e-3);
        CHECK(rep_.quaternion_sparsity <= rep_.component_sparsity);
    }
}

TEST_CASE("live counts react to dead batch-norm channels") {
    Model m = make_preset("mnist-qcnn-bn", 5);
    const SparsityReport before = sparsity_report(m, 1e-3);
    CHECK(before.live_params == before.total_params);
    CHECK(before.live_macs == before.total_macs);
    CHECK(before.total_macs > 0);

    // kill one conv1 output channel via bn1
    auto& bn1 = static_cast<QBatchNormLayer&>(*m.layers[1]);
    REQUIRE(bn1.name() == "bn1");
    bn1.gamma[0] = 0.0;
    const SparsityReport after = sparsity_report(m, 1e-3);
    CHECK(after.total_macs == before.total_macs);
    CHECK(after.neuron_sparsity == doctest::Approx(1.0 / 12).epsilon(1e-12));

    // conv1 loses 1*9 kernel quats + 1 bias, bn1 one beta, conv2 one 9-tap input slice
    // per output channel (8 of them)
    const std::size_t param_drop = (9 + 1) + 1 + 9 * 8;
    CHECK(before.live_params - after.live_params == param_drop);
    // conv1 loses 9 taps over its 26x26 map, conv2 loses 9 taps of one input channel
    // over its 11x11 map for each of 8 outputs
    const std::size_t mac_drop = 9 * 26 * 26 + 9 * 8 * 11 * 11;
    CHECK(before.live_macs - after.live_macs == mac_drop);
}

TEST_CASE("pruning with no dead channels returns an identical model") {
    RngStream rng(75);
    Model m = make_preset("mnist-qcnn-bn", 6);
    Model pruned = prune_gamma(m, 1e-3);

    QTensor x({2, 1, 28, 28});
    for (std::size_t n = 0; n < x.numel(); ++n) x.set(n, random_quat(rng, 0.0, 1.0));
    RngStream r1(0), r2(0);
    const RealMatrix a = m.forward(x, Pass::Infer, r1);
    const RealMatrix b = pruned.forward(x, Pass::Infer, r2);
    for (std::size_t n = 0; n < a.data.size(); ++n) CHECK(a.data[n] == b.data[n]);
}

TEST_CASE("pruning a dead channel with zero shift is exact") {
    RngStream rng(76);
    Model m = make_preset("mnist-qcnn-bn", 7);
    auto& bn1 = static_cast<QBatchNormLayer&>(*m.layers[1]);
    bn1.gamma[2] = 0.0;  // beta stays zero from initialization

    Model pruned = prune_gamma(m, 1e-3);
    const auto& conv1 = static_cast<const QConv2dLayer&>(*pruned.layers[0]);
    CHECK(conv1.out_channels() == 3);

    QTensor x({3, 1, 28, 28});
    for (std::size_t n = 0; n < x.numel(); ++n) x.set(n, random_quat(rng, 0.0, 1.0));
    RngStream r1(0), r2(0);
    const RealMatrix a = m.forward(x, Pass::Infer, r1);
    const RealMatrix b = pruned.forward(x, Pass::Infer, r2);
    for (std::size_t n = 0; n < a.data.size(); ++n) CHECK(std::abs(a.data[n] - b.data[n]) <= 1e-12);
}

TEST_CASE("pruning folds a nonzero shift into the consumer bias") {
    RngStream rng(77);
    Model m = make_preset("mnist-qcnn-bn", 8);
    auto& bn1 = static_cast<QBatchNormLayer&>(*m.layers[1]);
    auto& bn2 = static_cast<QBatchNormLayer&>(*m.layers[5]);
    REQUIRE(bn2.name() == "bn2");
    bn1.gamma[1] = 0.0;
    bn1.beta.set(1, {0.4, -0.2, 0.3, 0.1});  // folds into conv2 through relu and pool
    bn2.gamma[5] = 5e-4;                     // below threshold; folds into the dense layer
    bn2.beta.set(5, {-0.3, 0.6, 0.05, -0.1});

    Model pruned = prune_gamma(m, 1e-3);
    const auto& conv1 = static_cast<const QConv2dLayer&>(*pruned.layers[0]);
    const auto& conv2 = static_cast<const QConv2dLayer&>(*pruned.layers[4]);
    const auto& fc = static_cast<const QDenseLayer&>(*pruned.layers.back());
    CHECK(conv1.out_channels() == 3);
    CHECK(conv2.in_channels() == 3);
    CHECK(conv2.out_channels() == 7);
    CHECK(fc.in_features() == 7 * 5 * 5);

    // the masked model (gamma exactly zero) and the pruned model agree: bn2's dead
    // channel is only approximately dead at gamma=5e-4, so compare against a masked copy
    Model masked = m;
    static_cast<QBatchNormLayer&>(*masked.layers[5]).gamma[5] = 0.0;

    QTensor x({4, 1, 28, 28});
    for (std::size_t n = 0; n < x.numel(); ++n) x.set(n, random_quat(rng, 0.0, 1.0));
    RngStream r1(0), r2(0);
    const RealMatrix a = masked.forward(x, Pass::Infer, r1);
    const RealMatrix b = pruned.forward(x, Pass::Infer, r2);
    for (std::size_t n = 0; n < a.data.size(); ++n) CHECK(std::abs(a.data[n] - b.data[n]) <= 1e-9);

    // all sub-threshold neurons are physically gone
    SparsityReport rep = sparsity_report(pruned, 1e-3);
    CHECK(rep.neuron_sparsity == 0.0);
}

TEST_CASE("pruning error cases") {
    Model no_bn = make_preset("mnist-qcnn", 9);
    CHECK_THROWS_AS(prune_gamma(no_bn, 1e-3), ConfigError);

    Model m = make_preset("mnist-qcnn-bn", 10);
    auto& bn1 = static_cast<QBatchNormLayer&>(*m.layers[1]);
    for (double& g : bn1.gamma) g = 0.0;
    CHECK_THROWS_WITH_AS(prune_gamma(m, 1e-3), doctest::Contains("bn1"), ConfigError);

    Model bad;
    bad.arch = "bn-first";
    bad.input_shape = {2, 4, 4};
    bad.num_classes = 2;
    bad.add(std::make_unique<QBatchNormLayer>(2));
    bad.add(std::make_unique<QDenseLayer>(2, 2 * 4 * 4));
    CHECK_THROWS_AS(prune_gamma(bad, 1e-3), ConfigError);
}

}  // TEST_SUITE
