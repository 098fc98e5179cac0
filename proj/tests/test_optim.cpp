#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

#include "qvnn/data.hpp"
#include "qvnn/error.hpp"
#include "qvnn/model.hpp"
#include "qvnn/optim.hpp"
#include "qvnn/presets.hpp"
#include "qvnn/rng.hpp"

using namespace qvnn;

namespace {

// Standalone parameter bank for driving the optimizer without a model.
struct Bank {
    QTensor w, gw;
    explicit Bank(std::size_t n) : w({n}), gw({n}) {}
    ParamSet params() {
        ParamSet ps;
        ps.quat.push_back({"fc.W", &w, &gw, true});
        return ps;
    }
};

std::filesystem::path suite_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "qvnn_test_optim";
    std::filesystem::create_directories(dir);
    return dir;
}

// Synthetic digit corpus rendered once and shared by the training tests.
struct Corpus {
    Dataset train, test;
};

const Corpus& corpus() {
    static Corpus c = [] {
        const auto dir = suite_dir();
        make_synth_mnist(dir.string(), 1000, 200, 20240);
        return Corpus{load_mnist(dir.string(), true), load_mnist(dir.string(), false)};
    }();
    return c;
}

std::string read_all(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Unlearnable low-amplitude noise images with cyclic labels; only a regularizer can
// move the weights anywhere consistently.
Dataset noise_set(std::size_t n, std::size_t side, std::size_t classes, double amp, std::uint64_t seed) {
    Dataset d;
    d.channels = 1;
    d.height = side;
    d.width = side;
    d.classes = classes;
    d.plane_r.resize(n * side * side);
    RngStream rng(seed);
    for (auto& p : d.plane_r) p = static_cast<float>(amp * rng.uniform());
    d.labels.resize(n);
    for (std::size_t m = 0; m < n; ++m) d.labels[m] = static_cast<int>(m % classes);
    return d;
}

Model tiny_dense_model(std::size_t classes, std::size_t side, std::uint64_t seed) {
    Model m;
    m.arch = "tiny-dense";
    m.input_shape = {1, side, side};
    m.num_classes = classes;
    m.add(std::make_unique<QDenseLayer>(classes, side * side));
    RngStream rng(seed);
    m.init_params(rng);
    return m;
}

std::vector<double> flatten_params(Model& m) {
    std::vector<double> out;
    for (const auto& v : m.params().quat)
        for (int c = 0; c < 4; ++c)
            out.insert(out.end(), v.value->plane(c), v.value->plane(c) + v.value->numel());
    for (const auto& v : m.params().real) out.insert(out.end(), v.value->begin(), v.value->end());
    return out;
}

}  // namespace

TEST_SUITE("optim") {

TEST_CASE("zero gradients leave parameters and moments untouched") {
    Bank b(3);
    RngStream rng(90);
    for (std::size_t n = 0; n < 3; ++n)
        b.w.set(n, {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    const QTensor before = b.w;

    AdamState st;
    ParamSet ps = b.params();
    adam_step(st, ps);
    adam_step(st, ps);

    CHECK(st.t == 2);
    for (int c = 0; c < 4; ++c)
        for (std::size_t n = 0; n < 3; ++n) {
            CHECK(b.w.plane(c)[n] == before.plane(c)[n]);
            CHECK(st.m_quat[0].plane(c)[n] == 0.0);
            CHECK(st.v_quat[0].plane(c)[n] == 0.0);
        }
}

TEST_CASE("adam matches an independently computed scalar recurrence") {
    Bank b(1);
    b.w.set(0, {0.5, -0.25, 1.0, -2.0});
    const Quaternion g{0.3, -0.2, 0.5, 0.04};
    b.gw.set(0, g);

    AdamState st;
    st.alpha = 1e-3;
    ParamSet ps = b.params();

    const double comps[4] = {g.r, g.i, g.j, g.k};
    double w_ref[4] = {0.5, -0.25, 1.0, -2.0};
    double m_ref[4] = {0, 0, 0, 0}, v_ref[4] = {0, 0, 0, 0};
    const double b1 = st.beta1, b2 = st.beta2;

    for (int t = 1; t <= 10; ++t) {
        adam_step(st, ps);
        for (int c = 0; c < 4; ++c) {
            m_ref[c] = b1 * m_ref[c] + (1.0 - b1) * comps[c];
            v_ref[c] = b2 * v_ref[c] + (1.0 - b2) * comps[c] * comps[c];
            const double mhat = m_ref[c] / (1.0 - std::pow(b1, t));
            const double vhat = v_ref[c] / (1.0 - std::pow(b2, t));
            w_ref[c] -= st.alpha * mhat / (std::sqrt(vhat) + st.eps);
            CHECK(b.w.plane(c)[0] == doctest::Approx(w_ref[c]).epsilon(1e-13));
        }
    }
}

TEST_CASE("a constant gradient drives steps toward alpha times its sign") {
    Bank b(1);
    b.w.set(0, {10.0, -10.0, 10.0, -10.0});  // far from zero so the sign never flips
    b.gw.set(0, {0.3, -0.07, 1.4, -0.002});

    AdamState st;
    st.alpha = 1e-3;
    ParamSet ps = b.params();
    for (int t = 0; t < 200; ++t) adam_step(st, ps);

    const Quaternion before = b.w.at(0);
    adam_step(st, ps);
    const Quaternion after = b.w.at(0);
    const double deltas[4] = {after.r - before.r, after.i - before.i, after.j - before.j, after.k - before.k};
    const double grads[4] = {0.3, -0.07, 1.4, -0.002};
    for (int c = 0; c < 4; ++c) {
        CHECK(std::abs(deltas[c]) <= st.alpha * 1.000001);
        CHECK(std::abs(deltas[c]) >= st.alpha * 0.999);
        CHECK(deltas[c] * grads[c] < 0.0);  // moves against the gradient
    }
}

TEST_CASE("identical gradients produce identical updates") {
    QTensor w1({2}), w2({2}), g1({2}), g2({2});
    RngStream rng(91);
    for (std::size_t n = 0; n < 2; ++n) {
        const Quaternion w{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const Quaternion g{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        w1.set(n, w);
        w2.set(n, w);
        g1.set(n, g);
        g2.set(n, g);
    }
    ParamSet ps;
    ps.quat.push_back({"a.W", &w1, &g1, true});
    ps.quat.push_back({"b.W", &w2, &g2, true});

    AdamState st;
    for (int t = 0; t < 5; ++t) adam_step(st, ps);
    for (int c = 0; c < 4; ++c)
        for (std::size_t n = 0; n < 2; ++n) CHECK(w1.plane(c)[n] == w2.plane(c)[n]);
}

TEST_CASE("non-finite gradients abort with the parameter name") {
    Bank b(2);
    b.gw.set(1, {0.1, std::nan(""), 0.0, 0.0});
    AdamState st;
    ParamSet ps = b.params();
    CHECK_THROWS_WITH_AS(adam_step(st, ps), doctest::Contains("fc.W"), NumericError);

    b.gw.set(1, {0.1, 0.0, std::numeric_limits<double>::infinity(), 0.0});
    AdamState st2;
    CHECK_THROWS_AS(adam_step(st2, ps), NumericError);
}

TEST_CASE("training rejects bad configurations and data up front") {
    Model m = tiny_dense_model(4, 4, 92);
    Dataset d = noise_set(8, 4, 4, 1.0, 92);
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(train(m, d, d, cfg), ConfigError);
    cfg.epochs = 1;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(train(m, d, d, cfg), ConfigError);
    cfg.batch_size = 4;
    cfg.lr = 0.0;
    CHECK_THROWS_AS(train(m, d, d, cfg), ConfigError);
    cfg.lr = 1e-3;
    cfg.reg.lambda = -1.0;
    CHECK_THROWS_AS(train(m, d, d, cfg), ConfigError);
    cfg.reg.lambda = 0.0;

    // scale penalty without batch norm
    cfg.reg.kind = RegKind::BnGammaL1;
    CHECK_THROWS_AS(train(m, d, d, cfg), ConfigError);
    cfg.reg.kind = RegKind::None;

    // out-of-range label fails before any update
    const std::vector<double> before = flatten_params(m);
    Dataset bad = d;
    bad.labels[5] = 4;
    CHECK_THROWS_AS(train(m, bad, d, cfg), DataError);
    CHECK(flatten_params(m) == before);

    Dataset empty;
    empty.channels = 1;
    empty.height = 4;
    empty.width = 4;
    empty.classes = 4;
    CHECK_THROWS_AS(train(m, empty, d, cfg), DataError);
}

TEST_CASE("evaluate: uniform scores hit chance, a correct single sample scores 1") {
    // all-zero weights give equal scores, so argmax falls on class 0
    Model zero;
    zero.arch = "zero";
    zero.input_shape = {1, 28, 28};
    zero.num_classes = 10;
    zero.add(std::make_unique<QDenseLayer>(10, 28 * 28));
    const Dataset& train_set = corpus().train;  // 1000 samples
    std::size_t zeros = 0;
    for (int l : train_set.labels) zeros += l == 0 ? 1 : 0;
    const double acc = evaluate(zero, train_set);
    CHECK(acc == doctest::Approx(static_cast<double>(zeros) / 1000.0).epsilon(1e-12));
    CHECK(std::abs(acc - 0.1) <= 0.03);

    Model biased = tiny_dense_model(4, 1, 93);
    auto& fc = static_cast<QDenseLayer&>(*biased.layers[0]);
    fc.W.zero();
    fc.b.zero();
    fc.b.set(2, {5, 0, 0, 0});
    Dataset one;
    one.channels = 1;
    one.height = 1;
    one.width = 1;
    one.classes = 4;
    one.plane_r = {0.7f};
    one.labels = {2};
    CHECK(evaluate(biased, one) == 1.0);
    one.labels = {1};
    CHECK(evaluate(biased, one) == 0.0);
}

TEST_CASE("evaluate is unchanged by reordering the dataset") {
    Model m = make_preset("mnist-qcnn", 3);
    const Dataset& d = corpus().test;  // 200 samples, spans two batches
    Dataset rev = d;
    const std::size_t n = d.size(), chw = d.sample_numel();
    for (std::size_t s = 0; s < n; ++s) {
        rev.labels[s] = d.labels[n - 1 - s];
        for (std::size_t e = 0; e < chw; ++e) rev.plane_r[s * chw + e] = d.plane_r[(n - 1 - s) * chw + e];
    }
    CHECK(evaluate(m, d) == evaluate(m, rev));
}

TEST_CASE("the same seed reproduces a run bit for bit") {
    const std::string csv_a = (suite_dir() / "det_a.csv").string();
    const std::string csv_b = (suite_dir() / "det_b.csv").string();

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 25;
    cfg.subset = 200;
    cfg.seed = 7;
    cfg.timing = false;
    cfg.reg.kind = RegKind::RQ;
    cfg.reg.lambda = 1e-4;

    Model a = make_preset("mnist-qcnn", 7);
    cfg.metrics_csv = csv_a;
    const auto ma = train(a, corpus().train, corpus().test, cfg);

    Model b = make_preset("mnist-qcnn", 7);
    cfg.metrics_csv = csv_b;
    const auto mb = train(b, corpus().train, corpus().test, cfg);

    REQUIRE(ma.size() == mb.size());
    for (std::size_t e = 0; e < ma.size(); ++e) {
        CHECK(ma[e].train_loss == mb[e].train_loss);
        CHECK(ma[e].test_acc == mb[e].test_acc);
        CHECK(ma[e].component_sparsity == mb[e].component_sparsity);
        CHECK(ma[e].quaternion_sparsity == mb[e].quaternion_sparsity);
        CHECK(ma[e].neuron_sparsity == mb[e].neuron_sparsity);
        CHECK(ma[e].wall_seconds == 0.0);
    }
    CHECK(flatten_params(a) == flatten_params(b));
    CHECK(read_all(csv_a) == read_all(csv_b));

    // a different seed diverges
    Model c = make_preset("mnist-qcnn", 8);
    cfg.metrics_csv.clear();
    cfg.seed = 8;
    const auto mc = train(c, corpus().train, corpus().test, cfg);
    CHECK(mc[1].train_loss != mb[1].train_loss);
}

TEST_CASE("lambda zero reduces every penalty to unregularized training") {
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 25;
    cfg.subset = 150;
    cfg.seed = 11;
    cfg.timing = false;

    cfg.reg.kind = RegKind::None;
    Model base = make_preset("mnist-qcnn", 11);
    const auto mb = train(base, corpus().train, corpus().test, cfg);
    const auto base_params = flatten_params(base);

    for (RegKind kind : {RegKind::L2Elem, RegKind::L1Elem, RegKind::RQ, RegKind::RQL}) {
        cfg.reg.kind = kind;
        cfg.reg.lambda = 0.0;
        Model m = make_preset("mnist-qcnn", 11);
        const auto mm = train(m, corpus().train, corpus().test, cfg);
        CHECK(mm[0].train_loss == mb[0].train_loss);
        CHECK(mm[0].test_acc == mb[0].test_acc);
        CHECK(flatten_params(m) == base_params);
    }
}

TEST_CASE("metrics csv carries the run header and flushed epoch rows") {
    const std::string path = (suite_dir() / "metrics.csv").string();
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.subset = 64;
    cfg.seed = 3;
    cfg.timing = false;
    cfg.reg.kind = RegKind::RQ;
    cfg.reg.lambda = 0.001;
    cfg.metrics_csv = path;

    Model m = make_preset("mnist-qcnn", 3);
    train(m, corpus().train, corpus().test, cfg);

    std::ifstream f(path);
    REQUIRE(f.good());
    std::string line;
    REQUIRE(std::getline(f, line));
    CHECK(line.find("# arch=mnist-qcnn") == 0);
    CHECK(line.find("reg=rq") != std::string::npos);
    CHECK(line.find("lambda=0.001") != std::string::npos);
    CHECK(line.find("seed=3") != std::string::npos);
    CHECK(line.find("pixel_scale=1/255") != std::string::npos);
    REQUIRE(std::getline(f, line));
    CHECK(line == "epoch,train_loss,test_acc,component_sparsity,quaternion_sparsity,neuron_sparsity,wall_seconds");
    std::size_t rows = 0;
    while (std::getline(f, line)) {
        ++rows;
        CHECK(line.substr(0, 2) == std::to_string(rows) + ",");
        CHECK(line.rfind(",0") == line.size() - 2);  // wall_seconds written as 0
    }
    CHECK(rows == 2);

    cfg.metrics_csv = (suite_dir() / "missing_dir_xyz" / "metrics.csv").string();
    Model m2 = make_preset("mnist-qcnn", 3);
    CHECK_THROWS_AS(train(m2, corpus().train, corpus().test, cfg), ConfigError);
}

TEST_CASE("a hundred-sample overfit run drives the loss down to memorization") {
    const Dataset small = corpus().train.slice(0, 100);
    Model m = make_preset("mnist-qcnn", 21);
    TrainConfig cfg;
    cfg.epochs = 120;
    cfg.batch_size = 100;  // full batch
    cfg.lr = 1e-3;
    cfg.seed = 21;
    cfg.dropout = 0.0;  // deterministic objective so the loss curve is clean
    cfg.timing = false;

    const auto metrics = train(m, small, small, cfg);
    double best_acc = 0.0;
    for (const auto& em : metrics) best_acc = std::max(best_acc, em.test_acc);
    CHECK(best_acc >= 0.99);
    CHECK(metrics.back().train_loss < 0.1 * metrics.front().train_loss);
    for (std::size_t e = 1; e < metrics.size(); ++e)
        CHECK(metrics[e].train_loss <= metrics[e - 1].train_loss + 1e-3);
}

TEST_CASE("the objective decreases over the first five epochs for every penalty") {
    TrainConfig base;
    base.epochs = 5;
    base.batch_size = 32;
    base.subset = 320;
    base.seed = 5;
    base.timing = false;
    base.reg.lambda = 1e-4;

    const std::pair<RegKind, const char*> kinds[] = {
        {RegKind::None, "mnist-qcnn"},        {RegKind::L2Elem, "mnist-qcnn"},
        {RegKind::L1Elem, "mnist-qcnn"},      {RegKind::RQ, "mnist-qcnn"},
        {RegKind::RQL, "mnist-qcnn"},         {RegKind::BnGammaL1, "mnist-qcnn-bn"},
        {RegKind::RQBnGammaL1, "mnist-qcnn-bn"},
    };
    for (const auto& [kind, preset] : kinds) {
        CAPTURE(reg_kind_name(kind));
        TrainConfig cfg = base;
        cfg.reg.kind = kind;
        Model m = make_preset(preset, 5);
        const auto metrics = train(m, corpus().train, corpus().test, cfg);
        CHECK(metrics.back().train_loss < metrics.front().train_loss);
        for (std::size_t e = 1; e < metrics.size(); ++e)
            CHECK(metrics[e].train_loss <= metrics[e - 1].train_loss + 0.05);
    }
}

TEST_CASE("quaternion sparsity is non-decreasing in lambda on two-epoch runs") {
    double prev = -1.0;
    for (double lambda : {1e-5, 1e-4, 1e-3}) {
        CAPTURE(lambda);
        TrainConfig cfg;
        cfg.epochs = 2;
        cfg.batch_size = 16;
        cfg.subset = 1000;
        cfg.seed = 13;
        cfg.timing = false;
        cfg.reg.kind = RegKind::RQ;
        cfg.reg.lambda = lambda;
        Model m = make_preset("mnist-qcnn", 13);
        const auto metrics = train(m, corpus().train, corpus().test, cfg);
        CHECK(metrics.back().quaternion_sparsity >= prev);
        prev = metrics.back().quaternion_sparsity;
    }
}

TEST_CASE("lambda separates sparsity levels when the data carries no signal") {
    // 0.02-amplitude noise cannot be fit, so the weight path is ruled by the penalty:
    // negligible at lambda 1e-2, decisive at 1, saturated at 100.
    const Dataset noise = noise_set(64, 4, 4, 0.02, 17);
    std::vector<double> sparsity;
    for (double lambda : {1e-2, 1.0, 100.0}) {
        Model m = tiny_dense_model(4, 4, 17);
        TrainConfig cfg;
        cfg.epochs = 400;
        cfg.batch_size = 16;
        cfg.lr = 2e-4;
        cfg.seed = 17;
        cfg.timing = false;
        cfg.reg.kind = RegKind::RQ;
        cfg.reg.lambda = lambda;
        const auto metrics = train(m, noise, noise, cfg);
        sparsity.push_back(metrics.back().quaternion_sparsity);
    }
    CHECK(sparsity[0] <= sparsity[1] + 0.02);
    CHECK(sparsity[1] <= sparsity[2] + 0.02);
    CHECK(sparsity[0] < 0.5);
    CHECK(sparsity[2] > 0.5);
}

TEST_CASE("an extreme lambda crushes the weights and the accuracy") {
    Model m = make_preset("mnist-qcnn", 29);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 2;
    cfg.subset = 1000;
    cfg.lr = 1.5e-4;
    cfg.seed = 29;
    cfg.dropout = 0.0;
    cfg.timing = false;
    cfg.reg.kind = RegKind::RQ;
    cfg.reg.lambda = 1e3;

    const auto metrics = train(m, corpus().train, corpus().test, cfg);
    CHECK(metrics.back().quaternion_sparsity >= 0.9);
    CHECK(metrics.back().test_acc <= 0.25);
}

}  // TEST_SUITE
