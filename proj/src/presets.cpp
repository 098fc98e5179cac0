#include "qvnn/presets.hpp"

#include <memory>

#include "qvnn/error.hpp"

namespace qvnn {

namespace {

void add_named(Model& m, std::unique_ptr<Layer> l, const std::string& name) {
    l->set_name(name);
    m.add(std::move(l));
}

Model mnist_qcnn(bool with_bn) {
    Model m;
    m.arch = with_bn ? "mnist-qcnn-bn" : "mnist-qcnn";
    m.input_shape = {1, 28, 28};
    m.num_classes = 10;

    add_named(m, std::make_unique<QConv2dLayer>(4, 1, 3, 3), "conv1");
    if (with_bn) add_named(m, std::make_unique<QBatchNormLayer>(4), "bn1");
    add_named(m, std::make_unique<SplitActivationLayer>(), "relu1");
    add_named(m, std::make_unique<QMaxPoolLayer>(), "pool1");

    add_named(m, std::make_unique<QConv2dLayer>(8, 4, 3, 3), "conv2");
    if (with_bn) add_named(m, std::make_unique<QBatchNormLayer>(8), "bn2");
    add_named(m, std::make_unique<SplitActivationLayer>(), "relu2");
    add_named(m, std::make_unique<QMaxPoolLayer>(), "pool2");

    add_named(m, std::make_unique<QDropoutLayer>(0.2), "drop1");
    add_named(m, std::make_unique<QDenseLayer>(10, 8 * 5 * 5), "fc");
    return m;
}

Model cifar_qcnn(std::size_t base) {
    Model m;
    m.arch = base == 8 ? "cifar-qcnn-paper" : "cifar-qcnn-lite";
    m.input_shape = {1, 32, 32};
    m.num_classes = 10;

    const std::size_t c1 = base, c2 = 2 * base, c3 = 4 * base, c4 = 8 * base, c5 = 16 * base;

    add_named(m, std::make_unique<QConv2dLayer>(c1, 1, 3, 3, 1, 1), "conv1");
    add_named(m, std::make_unique<SplitActivationLayer>(), "relu1");
    add_named(m, std::make_unique<QMaxPoolLayer>(), "pool1");

    add_named(m, std::make_unique<QConv2dLayer>(c2, c1, 3, 3, 1, 1), "conv2");
    add_named(m, std::make_unique<SplitActivationLayer>(), "relu2");
    add_named(m, std::make_unique<QMaxPoolLayer>(), "pool2");
    add_named(m, std::make_unique<QDropoutLayer>(0.2), "drop1");

    add_named(m, std::make_unique<QConv2dLayer>(c3, c2, 3, 3, 1, 1), "conv3");
    add_named(m, std::make_unique<SplitActivationLayer>(), "relu3");
    add_named(m, std::make_unique<QMaxPoolLayer>(), "pool3");

    add_named(m, std::make_unique<QConv2dLayer>(c4, c3, 3, 3, 1, 1), "conv4");
    add_named(m, std::make_unique<SplitActivationLayer>(), "relu4");
    add_named(m, std::make_unique<QMaxPoolLayer>(), "pool4");
    add_named(m, std::make_unique<QDropoutLayer>(0.2), "drop2");

    add_named(m, std::make_unique<QConv2dLayer>(c5, c4, 3, 3, 1, 1), "conv5");
    add_named(m, std::make_unique<SplitActivationLayer>(), "relu5");

    add_named(m, std::make_unique<QDenseLayer>(10, c5 * 2 * 2), "fc");
    return m;
}

}  // namespace

// Grid-tuned strengths from the acceptance sweeps on the synthetic corpus, kept here
// as a starting point rather than wired in as defaults: l1 1e-3, rq 1e-2, rql 1e-3
// on mnist-qcnn; bn-l1 1.0 on mnist-qcnn-bn.

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {"mnist-qcnn", "mnist-qcnn-bn", "cifar-qcnn-lite",
                                                   "cifar-qcnn-paper"};
    return names;
}

Model make_preset(const std::string& name, std::uint64_t seed) {
    Model m;
    if (name == "mnist-qcnn") {
        m = mnist_qcnn(false);
    } else if (name == "mnist-qcnn-bn") {
        m = mnist_qcnn(true);
    } else if (name == "cifar-qcnn-paper") {
        m = cifar_qcnn(8);
    } else if (name == "cifar-qcnn-lite") {
        m = cifar_qcnn(2);
    } else {
        std::string valid;
        for (const auto& n : preset_names()) {
            if (!valid.empty()) valid += ", ";
            valid += n;
        }
        throw ConfigError("unknown preset '" + name + "' (valid: " + valid + ")");
    }
    RngStream rng(seed);
    m.init_params(rng);
    return m;
}

}  // namespace qvnn
