#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qvnn/data.hpp"
#include "qvnn/error.hpp"
#include "qvnn/gradcheck.hpp"
#include "qvnn/optim.hpp"
#include "qvnn/presets.hpp"
#include "qvnn/regularizers.hpp"
#include "qvnn/serialize.hpp"

namespace {

using namespace qvnn;

Dataset load_split(const std::string& dataset, const std::string& dir, bool train) {
    if (dataset == "mnist") return load_mnist(dir, train);
    if (dataset == "cifar10") return load_cifar10(dir, train);
    throw ConfigError("unknown dataset '" + dataset + "' (valid: mnist, cifar10)");
}

void check_input_shape(const Model& model, const Dataset& data) {
    const std::vector<std::size_t> got = {data.channels, data.height, data.width};
    if (model.input_shape != got)
        throw ConfigError("model expects input " + shape_str(model.input_shape) + " but the dataset provides " +
                          shape_str(got));
}

void print_report(const char* tag, const SparsityReport& rep) {
    std::printf("%s component_sparsity %.6f quaternion_sparsity %.6f neuron_sparsity %.6f\n", tag,
                rep.component_sparsity, rep.quaternion_sparsity, rep.neuron_sparsity);
    std::printf("%s live_params %zu of %zu, live_macs %zu of %zu (%.1f%%)\n", tag, rep.live_params, rep.total_params,
                rep.live_macs, rep.total_macs,
                rep.total_macs ? 100.0 * static_cast<double>(rep.live_macs) / static_cast<double>(rep.total_macs)
                               : 0.0);
}

int run(int argc, char** argv) {
    CLI::App app{"quaternion-valued network trainer"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "train a preset on a dataset");
    std::string dataset, data_dir, preset_name, out_path, csv_path;
    TrainConfig cfg;
    std::string reg_name = "none";
    train_cmd->add_option("--dataset", dataset, "mnist or cifar10")
        ->required()
        ->check(CLI::IsMember({"mnist", "cifar10"}));
    train_cmd->add_option("--data-dir", data_dir, "directory with the dataset files")->required();
    train_cmd->add_option("--preset", preset_name, "architecture preset")->required();
    train_cmd->add_option("--subset", cfg.subset, "train on the first N samples (0 = all)");
    train_cmd->add_option("--epochs", cfg.epochs, "training epochs")->check(CLI::PositiveNumber);
    train_cmd->add_option("--batch-size", cfg.batch_size, "mini-batch size")->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr", cfg.lr, "Adam learning rate");
    train_cmd->add_option("--reg", reg_name, "regularizer: none|l2|l1|rq|rql|bn-l1|rq+bn-l1");
    train_cmd->add_option("--lambda", cfg.reg.lambda, "regularization strength");
    train_cmd->add_option("--threshold", cfg.reg.threshold, "sparsity counting threshold");
    train_cmd->add_option("--seed", cfg.seed, "seed for init-independent run randomness");
    train_cmd->add_option("--dropout", cfg.dropout, "override every dropout rate (negative keeps preset rates)");
    train_cmd->add_option("--out", out_path, "write the trained model here");
    train_cmd->add_option("--metrics-csv", csv_path, "write per-epoch metrics here");
    train_cmd->add_flag("--timing,!--no-timing", cfg.timing, "record wall seconds per epoch (default on)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a model on a dataset's test split");
    std::string eval_model, eval_dataset, eval_dir;
    eval_cmd->add_option("--model", eval_model, "model file")->required();
    eval_cmd->add_option("--dataset", eval_dataset, "mnist or cifar10")
        ->required()
        ->check(CLI::IsMember({"mnist", "cifar10"}));
    eval_cmd->add_option("--data-dir", eval_dir, "directory with the dataset files")->required();

    // prune
    auto* prune_cmd = app.add_subcommand("prune", "remove channels whose batch-norm scale is below a threshold");
    std::string prune_model, prune_out;
    double prune_tau = 1e-3;
    prune_cmd->add_option("--model", prune_model, "model file")->required();
    prune_cmd->add_option("--threshold", prune_tau, "liveness threshold on |gamma|");
    prune_cmd->add_option("--out", prune_out, "write the pruned model here")->required();

    // report
    auto* report_cmd = app.add_subcommand("report", "print sparsity and MAC counts for a model");
    std::string report_model;
    double report_tau = 1e-3;
    report_cmd->add_option("--model", report_model, "model file")->required();
    report_cmd->add_option("--threshold", report_tau, "sparsity counting threshold");

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "compare backward against finite differences");
    std::string grad_preset;
    std::uint64_t grad_seed = 0;
    grad_cmd->add_option("--preset", grad_preset, "architecture preset")->required();
    grad_cmd->add_option("--seed", grad_seed, "seed for weights and probe batch");

    // make-synth
    auto* synth_cmd = app.add_subcommand("make-synth", "write a procedural stand-in digit corpus in IDX format");
    std::string synth_dir;
    std::size_t synth_train = 12000, synth_test = 10000;
    std::uint64_t synth_seed = 0;
    synth_cmd->add_option("--out-dir", synth_dir, "output directory")->required();
    synth_cmd->add_option("--train-n", synth_train, "training images")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--test-n", synth_test, "test images")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--seed", synth_seed, "generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);  // --help and friends
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: %s\n\n%s", e.what(), app.help().c_str());
        return 2;
    }

    if (train_cmd->parsed()) {
        cfg.reg.kind = parse_reg_kind(reg_name);
        cfg.metrics_csv = csv_path;
        Model model = make_preset(preset_name, cfg.seed);
        const Dataset train_data = load_split(dataset, data_dir, true);
        const Dataset test_data = load_split(dataset, data_dir, false);
        check_input_shape(model, train_data);
        const auto metrics = train(model, train_data, test_data, cfg);
        for (const auto& em : metrics) {
            std::string timing;
            if (cfg.timing) timing = " (" + std::to_string(em.wall_seconds) + "s)";
            std::printf("epoch %zu/%zu loss %.6f acc %.4f sparsity c %.4f q %.4f n %.4f%s\n", em.epoch, cfg.epochs,
                        em.train_loss, em.test_acc, em.component_sparsity, em.quaternion_sparsity,
                        em.neuron_sparsity, timing.c_str());
        }
        if (!out_path.empty()) {
            save_model(model, out_path);
            std::printf("saved model to %s\n", out_path.c_str());
        }
        return 0;
    }

    if (eval_cmd->parsed()) {
        Model model = load_model(eval_model);
        const Dataset data = load_split(eval_dataset, eval_dir, false);
        check_input_shape(model, data);
        std::printf("accuracy %.6f\n", evaluate(model, data));
        return 0;
    }

    if (prune_cmd->parsed()) {
        Model model = load_model(prune_model);
        print_report("before:", sparsity_report(model, prune_tau));
        Model pruned = prune_gamma(model, prune_tau);
        print_report("after:", sparsity_report(pruned, prune_tau));
        save_model(pruned, prune_out);
        std::printf("saved pruned model to %s\n", prune_out.c_str());
        return 0;
    }

    if (report_cmd->parsed()) {
        Model model = load_model(report_model);
        print_report("report:", sparsity_report(model, report_tau));
        return 0;
    }

    if (grad_cmd->parsed()) {
        Model model = make_preset(grad_preset, grad_seed);
        model.set_dropout(0.0);
        RngStream rng(grad_seed);
        QTensor x({4, model.input_shape[0], model.input_shape[1], model.input_shape[2]});
        for (int c = 0; c < 4; ++c) {
            double* p = x.plane(c);
            for (std::size_t n = 0; n < x.numel(); ++n) p[n] = rng.uniform(-1.0, 1.0);
        }
        std::vector<int> labels(4);
        for (auto& l : labels) l = static_cast<int>(rng.below(model.num_classes));
        const GradCheckResult res = finite_diff_check(model, x, labels);
        std::printf("max_rel_error %.3e (checked %zu components, excluded %zu)\n", res.max_rel_error, res.checked,
                    res.excluded);
        return 0;
    }

    if (synth_cmd->parsed()) {
        make_synth_mnist(synth_dir, synth_train, synth_test, synth_seed);
        std::printf("wrote %zu train and %zu test images to %s\n", synth_train, synth_test, synth_dir.c_str());
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
