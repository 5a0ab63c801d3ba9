// Command-line driver: pretrain, build-hierarchy, train, eval, probe, and
// goodness-map export over the config/checkpoint formats.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "hclff/hclff.hpp"

namespace {

#ifdef HCLFF_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

int usage() {
    std::cerr <<
        "usage: hclff <command> [args] [flags]\n"
        "\n"
        "commands:\n"
        "  pretrain <config>                        stage-1 training (singleton hierarchy)\n"
        "  build-hierarchy <checkpoint> <out>       derive a class hierarchy from a checkpoint\n"
        "  train <config>                           full run (two-stage when hierarchy = data-driven)\n"
        "  eval <checkpoint> <dataset-config>       evaluation report (CSV to stdout)\n"
        "  probe <checkpoint>                       linear probe on final-layer features\n"
        "  export-goodness <checkpoint> <image-index> <out.csv>\n"
        "\n"
        "flags:\n"
        "  --mode sequential|pipeline   override execution mode\n"
        "  --queue-capacity N           pipeline queue capacity\n"
        "  --seed N                     override RNG seed\n"
        "  --epochs N                   override epoch count\n"
        "  --resume <checkpoint>        continue a train run\n";
    return 2;
}

struct Flags {
    std::optional<std::string> mode;
    std::optional<int> queue_capacity;
    std::optional<uint64_t> seed;
    std::optional<int> epochs;
    std::string resume;
};

Flags parse_flags(std::vector<std::string>& args) {
    Flags flags;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        auto next = [&](const char* what) -> std::string {
            if (i + 1 >= args.size()) throw hclff::config_error(std::string(what) + " needs a value");
            return args[++i];
        };
        if (a == "--mode") flags.mode = next("--mode");
        else if (a == "--queue-capacity") flags.queue_capacity = std::stoi(next("--queue-capacity"));
        else if (a == "--seed") flags.seed = static_cast<uint64_t>(std::stoull(next("--seed")));
        else if (a == "--epochs") flags.epochs = std::stoi(next("--epochs"));
        else if (a == "--resume") flags.resume = next("--resume");
        else if (a.rfind("--", 0) == 0) throw hclff::config_error("unknown flag '" + a + "'");
        else rest.push_back(a);
    }
    args = std::move(rest);
    return flags;
}

hclff::TrainConfig load_config(const std::string& path, const Flags& flags) {
    hclff::TrainConfig cfg = hclff::parse_config_file(path);
    if (flags.mode) cfg.mode = *flags.mode;
    if (flags.queue_capacity) cfg.queue_capacity = *flags.queue_capacity;
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.epochs) cfg.epochs = *flags.epochs;
    cfg.validate();
    return cfg;
}

hclff::TrainConfig config_from_checkpoint(const hclff::Checkpoint<Real>& ckpt) {
    if (ckpt.config_text.empty()) throw hclff::data_error("checkpoint carries no embedded config");
    return hclff::parse_config_text(ckpt.config_text);
}

int cmd_pretrain(const std::string& config_path, const Flags& flags) {
    hclff::TrainConfig cfg = load_config(config_path, flags);
    std::filesystem::create_directories(cfg.out_dir);
    const auto data = hclff::load_data<Real>(cfg);
    std::ofstream metrics(std::filesystem::path(cfg.out_dir) / "stage1_metrics.csv");
    hclff::write_metrics_header(metrics);
    auto model = hclff::pretrain_model<Real>(cfg, data, &metrics, &std::cout);

    hclff::Checkpoint<Real> ckpt;
    ckpt.spec = model.net.spec;
    ckpt.net = std::move(model.net);
    ckpt.hierarchy_text = hclff::hierarchy_to_text(model.tree, model.strategy);
    ckpt.epoch = cfg.stage1_epochs > 0 ? cfg.stage1_epochs : cfg.epochs;
    ckpt.seed = cfg.seed;
    ckpt.config_text = cfg.raw_text;
    const std::string path = (std::filesystem::path(cfg.out_dir) / "stage1.ckpt").string();
    hclff::save_checkpoint(ckpt, path);
    std::cout << "saved " << path << "\n";
    return 0;
}

int cmd_build_hierarchy(const std::string& ckpt_path, const std::string& out_path) {
    auto ckpt = hclff::load_checkpoint<Real>(ckpt_path);
    hclff::TrainConfig cfg = config_from_checkpoint(ckpt);
    const auto data = hclff::load_data<Real>(cfg);
    const auto split = hclff::split_train_val(data.train.size(), cfg.val_fraction, cfg.seed);
    double probe_acc = 0;
    hclff::HierTree tree = hclff::derive_hierarchy(ckpt.net, data.train, split, cfg, &probe_acc);
    hclff::save_hierarchy(tree, hclff::mapping_strategy_from(cfg.mapping), out_path);
    std::cout << "probe accuracy " << probe_acc << "\n";
    std::cout << "saved " << out_path << " (depth " << tree.depth_levels() << ")\n";
    return 0;
}

int cmd_train(const std::string& config_path, const Flags& flags) {
    hclff::TrainConfig cfg = load_config(config_path, flags);
    auto artifacts = hclff::run_two_stage<Real>(cfg, &std::cout, flags.resume);
    std::cout << "saved " << artifacts.checkpoint_path << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_config_path, const Flags& flags) {
    auto ckpt = hclff::load_checkpoint<Real>(ckpt_path);
    hclff::TrainConfig cfg = data_config_path.empty() ? config_from_checkpoint(ckpt)
                                                      : hclff::parse_config_file(data_config_path);
    if (flags.seed) cfg.seed = *flags.seed;
    const auto data = hclff::load_data<Real>(cfg);
    const auto split = hclff::split_train_val(data.train.size(), cfg.val_fraction, cfg.seed);
    const auto hierarchy = hclff::hierarchy_from_text(ckpt.hierarchy_text);
    const int threads = cfg.threads > 0 ? cfg.threads : hclff::default_threads();
    std::optional<hclff::SipInterval> sip;
    if (ckpt.has_sip) sip = ckpt.sip;
    auto report = hclff::evaluate_model(ckpt.net, hierarchy.tree, data.test, sip, threads, &data.train, &split,
                                        cfg.probe_epochs, cfg.probe_lr, cfg.seed);
    report.write_csv(std::cout);
    return 0;
}

int cmd_probe(const std::string& ckpt_path) {
    auto ckpt = hclff::load_checkpoint<Real>(ckpt_path);
    hclff::TrainConfig cfg = config_from_checkpoint(ckpt);
    const auto data = hclff::load_data<Real>(cfg);
    const auto split = hclff::split_train_val(data.train.size(), cfg.val_fraction, cfg.seed);
    const int threads = cfg.threads > 0 ? cfg.threads : hclff::default_threads();

    auto train_fwd = hclff::forward_dataset(ckpt.net, data.train, split.train, threads);
    std::vector<std::size_t> test_idx(data.test.size());
    for (std::size_t i = 0; i < test_idx.size(); ++i) test_idx[i] = i;
    auto test_fwd = hclff::forward_dataset(ckpt.net, data.test, test_idx, threads);

    auto after = hclff::linear_probe(train_fwd.features, train_fwd.labels, data.train.num_classes,
                                     test_fwd.features, test_fwd.labels, cfg.probe_epochs, cfg.probe_lr, cfg.seed);
    auto before = hclff::linear_probe(train_fwd.features_prenorm, train_fwd.labels, data.train.num_classes,
                                      test_fwd.features_prenorm, test_fwd.labels, cfg.probe_epochs, cfg.probe_lr,
                                      cfg.seed);
    std::cout << "probe_before_norm," << before.accuracy << "\n";
    std::cout << "probe_after_norm," << after.accuracy << "\n";
    return 0;
}

int cmd_export_goodness(const std::string& ckpt_path, const std::string& index_str, const std::string& out_path) {
    auto ckpt = hclff::load_checkpoint<Real>(ckpt_path);
    hclff::TrainConfig cfg = config_from_checkpoint(ckpt);
    const auto data = hclff::load_data<Real>(cfg);
    const std::size_t index = static_cast<std::size_t>(std::stoull(index_str));
    if (index >= data.test.size())
        throw hclff::argument_error("image index " + index_str + " outside test set of " +
                                    std::to_string(data.test.size()));
    auto fwd = hclff::forward_network(ckpt.net, data.test.image(index), true);

    // final layer of each residual block, plus the network's last layer
    std::vector<std::pair<int, hclff::LayerOutput<Real>>> picks;
    const int num_layers = static_cast<int>(ckpt.net.layers.size());
    for (int l = 0; l < num_layers; ++l)
        if (ckpt.net.spec.pos_in_block(l) == 3 || l == num_layers - 1)
            picks.emplace_back(l, std::move(fwd.outputs[static_cast<std::size_t>(l)]));
    hclff::export_goodness_maps(picks, ckpt.spec.num_classes, out_path);
    std::cout << "saved " << out_path << " (label " << data.test.labels[index] << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (args.empty()) return usage();
    try {
        Flags flags = parse_flags(args);
        const std::string cmd = args[0];
        if (cmd == "pretrain" && args.size() == 2) return cmd_pretrain(args[1], flags);
        if (cmd == "build-hierarchy" && args.size() == 3) return cmd_build_hierarchy(args[1], args[2]);
        if (cmd == "train" && args.size() == 2) return cmd_train(args[1], flags);
        if (cmd == "eval" && (args.size() == 2 || args.size() == 3))
            return cmd_eval(args[1], args.size() == 3 ? args[2] : "", flags);
        if (cmd == "probe" && args.size() == 2) return cmd_probe(args[1]);
        if (cmd == "export-goodness" && args.size() == 4) return cmd_export_goodness(args[1], args[2], args[3]);
        return usage();
    } catch (const hclff::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const hclff::data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const hclff::numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const hclff::argument_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
