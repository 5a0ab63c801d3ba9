#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hclff/checkpoint.hpp"
#include "hclff/config.hpp"
#include "hclff/data.hpp"
#include "hclff/trainer.hpp"

namespace hclff {

// ---------------------------------------------------------------------------
// Dataset resolution from a config.
// ---------------------------------------------------------------------------

template <class R>
struct DataBundle {
    Dataset<R> train;
    Dataset<R> test;
    std::optional<HierTree> ground_truth;  // synth only
};

template <class R>
DataBundle<R> load_data(const TrainConfig& cfg) {
    DataBundle<R> out;
    if (cfg.dataset == "mnist") {
        namespace fs = std::filesystem;
        const fs::path dir(cfg.data_dir);
        out.train = load_idx<R>((dir / "train-images-idx3-ubyte").string(),
                                (dir / "train-labels-idx1-ubyte").string());
        out.test = load_idx<R>((dir / "t10k-images-idx3-ubyte").string(), (dir / "t10k-labels-idx1-ubyte").string());
        out.test.split = Split::Test;
    } else if (cfg.dataset == "cifar10") {
        namespace fs = std::filesystem;
        const fs::path dir(cfg.data_dir);
        std::vector<std::string> train_files;
        for (int i = 1; i <= 5; ++i) train_files.push_back((dir / ("data_batch_" + std::to_string(i) + ".bin")).string());
        out.train = load_cifar10<R>(train_files);
        out.test = load_cifar10<R>({(dir / "test_batch.bin").string()});
        out.test.split = Split::Test;
    } else {
        SynthData<R> synth = synth_hier_dataset<R>(cfg.synth_classes, cfg.synth_levels, cfg.synth_per_class,
                                                   cfg.synth_image_size, cfg.seed, cfg.synth_noise);
        out.train = std::move(synth.train);
        out.test = std::move(synth.test);
        out.ground_truth = std::move(synth.tree);
    }
    if (cfg.train_limit > 0 && static_cast<std::size_t>(cfg.train_limit) < out.train.size()) {
        const std::size_t n = static_cast<std::size_t>(cfg.train_limit);
        const std::size_t chw = out.train.images.numel() / out.train.size();
        Dataset<R> limited;
        limited.images = Tensor<R>({n, out.train.images.dim(1), out.train.images.dim(2), out.train.images.dim(3)});
        std::copy(out.train.images.data.begin(), out.train.images.data.begin() + static_cast<long>(n * chw),
                  limited.images.data.begin());
        limited.labels.assign(out.train.labels.begin(), out.train.labels.begin() + static_cast<long>(n));
        limited.num_classes = out.train.num_classes;
        limited.split = out.train.split;
        limited.validate();
        out.train = std::move(limited);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hierarchy resolution: parse per-level partitions once for the trainer.
// ---------------------------------------------------------------------------

inline std::vector<SuperClassPartition> partitions_by_level(const HierTree& tree) {
    std::vector<SuperClassPartition> levels;
    for (int lv = 1; lv <= tree.leaf_level(); ++lv) levels.push_back(partitions_at_level(tree, lv));
    return levels;
}

inline std::string hierarchy_to_text(const HierTree& tree, MappingStrategy strategy) {
    std::ostringstream os;
    save_hierarchy(tree, strategy, os);
    return os.str();
}

inline LoadedHierarchy hierarchy_from_text(const std::string& text) {
    std::istringstream is(text);
    return load_hierarchy(is);
}

// ---------------------------------------------------------------------------
// Training driver pieces shared by the CLI subcommands.
// ---------------------------------------------------------------------------

template <class R>
struct TrainedModel {
    Network<R> net;
    HierTree tree;
    MappingStrategy strategy = MappingStrategy::Balanced;
    std::vector<MetricsRecord> metrics;
    SipInterval sip;
    bool has_sip = false;
};

template <class R>
TrainOptions train_options(const TrainConfig& cfg, double lambda) {
    TrainOptions opt;
    opt.lambda = lambda;
    opt.aug = cfg.augment_config();
    opt.batch_size = cfg.batch_size;
    opt.seed = cfg.seed;
    opt.threads = cfg.threads > 0 ? cfg.threads : default_threads();
    opt.queue_capacity = cfg.queue_capacity;
    opt.supcon_reduction = cfg.supcon_reduction == "mean_over_valid_anchors"
                               ? SupconReduction::MeanOverValidAnchors
                               : SupconReduction::Sum;
    return opt;
}

// Runs epochs [start_epoch, end_epoch) over an existing network, with the
// schedules laid out over schedule_epochs, appending metrics to `metrics_os`
// when given and collecting validation stats per cfg.val_every.
template <class R>
std::vector<MetricsRecord> train_epochs(Network<R>& net, const Dataset<R>& data, const TrainValSplit& split,
                                        const std::vector<SuperClassPartition>& levels, const TrainConfig& cfg,
                                        double lambda, int start_epoch, int end_epoch, int schedule_epochs,
                                        std::ostream* metrics_os = nullptr, std::ostream* log = nullptr) {
    const ScheduleConfig sched = cfg.schedule(schedule_epochs);
    const TrainOptions opt = train_options<R>(cfg, lambda);
    std::vector<MetricsRecord> records;
    for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
        MetricsRecord rec =
            cfg.mode == "pipeline"
                ? train_epoch_pipeline(net, data, split.train, levels, sched, epoch, opt)
                : train_epoch_sequential(net, data, split.train, levels, sched, epoch, opt);
        const bool measure_val = !split.val.empty() && cfg.val_every > 0 && ((epoch + 1) % cfg.val_every == 0);
        if (measure_val) {
            EvalForward<R> vf = forward_dataset(net, data, split.val, opt.threads);
            PerLayerAccuracy acc = per_layer_accuracy(vf.traces, vf.labels, {});
            rec.val_fine = acc.fine;
            SipInterval sip = sip_select(vf.traces, vf.labels);
            rec.val_sip_acc = sip.val_accuracy;
            rec.sip_s = sip.s;
            rec.sip_e = sip.e;
        }
        if (metrics_os) append_metrics(*metrics_os, rec);
        if (log) {
            *log << "epoch " << epoch << " lr " << rec.lr << " tau " << rec.tau << " loss "
                 << (rec.total.empty() ? 0.0 : rec.total.back()) << " last-layer acc "
                 << (rec.train_acc.empty() ? 0.0 : rec.train_acc.back());
            if (rec.val_sip_acc >= 0) *log << " val sip " << rec.val_sip_acc;
            *log << " (" << rec.seconds << "s)\n";
        }
        records.push_back(std::move(rec));
    }
    return records;
}

// Stage-1 pretraining: singleton partitions (plain competitive loss), with
// the contrastive term per config.
template <class R>
TrainedModel<R> pretrain_model(const TrainConfig& cfg, const DataBundle<R>& data, std::ostream* metrics_os = nullptr,
                               std::ostream* log = nullptr) {
    const HierTree tree = HierTree::singletons(data.train.num_classes);
    const auto levels = partitions_by_level(tree);
    const int epochs = cfg.stage1_epochs > 0 ? cfg.stage1_epochs : cfg.epochs;
    const NetworkSpec spec = cfg.network_spec(data.train.num_classes, static_cast<int>(data.train.channels()));
    const LevelMapping mapping = LevelMapping::build(spec.layer_count(), tree.depth_levels(),
                                                     mapping_strategy_from(cfg.mapping));
    TrainedModel<R> model;
    model.net = build_network<R>(spec, mapping, cfg.seed, {cfg.weight_decay, cfg.decoupled_decay});
    model.tree = tree;
    model.strategy = mapping_strategy_from(cfg.mapping);
    const TrainValSplit split = split_train_val(data.train.size(), cfg.val_fraction, cfg.seed);
    const double lambda = cfg.stage1_contrastive ? cfg.lambda : 0.0;
    model.metrics = train_epochs(model.net, data.train, split, levels, cfg, lambda, 0, epochs, epochs, metrics_os, log);
    return model;
}

// Data-driven hierarchy from a trained model: probe the final-layer features,
// cluster the classifier rows, pad the merge tree.
template <class R>
HierTree derive_hierarchy(const Network<R>& net, const Dataset<R>& train, const TrainValSplit& split,
                          const TrainConfig& cfg, double* probe_accuracy = nullptr) {
    const int threads = cfg.threads > 0 ? cfg.threads : default_threads();
    EvalForward<R> tf = forward_dataset(net, train, split.train, threads);
    EvalForward<R> vf;
    const bool have_val = !split.val.empty();
    if (have_val) vf = forward_dataset(net, train, split.val, threads);
    LinearProbe<R> probe =
        linear_probe(tf.features, tf.labels, train.num_classes, have_val ? vf.features : Tensor<R>(),
                     have_val ? vf.labels : std::vector<int>{}, cfg.probe_epochs, cfg.probe_lr, cfg.seed);
    if (probe_accuracy) *probe_accuracy = probe.accuracy;
    const ClassPrototypes protos = extract_prototypes(probe.weights);
    return pad_tree(build_tree(protos));
}

// ---------------------------------------------------------------------------
// Full two-stage run. Stage 1 is skipped when the config names a hierarchy
// file or asks for the singleton hierarchy. Stage 2 trains from scratch under
// the hierarchy and finishes with SIP interval selection on the validation
// split.
// ---------------------------------------------------------------------------

template <class R>
struct RunArtifacts {
    Checkpoint<R> checkpoint;
    std::string checkpoint_path;
    std::string hierarchy_path;  // empty if none written
    std::vector<MetricsRecord> metrics;
};

// stop_after > 0 interrupts training after that many epochs (the schedule is
// still laid out over the configured total); the checkpoint records where to
// resume.
template <class R>
RunArtifacts<R> run_two_stage(const TrainConfig& cfg, std::ostream* log = nullptr,
                              const std::string& resume_path = "", int stop_after = 0) {
    namespace fs = std::filesystem;
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    const DataBundle<R> data = load_data<R>(cfg);
    const TrainValSplit split = split_train_val(data.train.size(), cfg.val_fraction, cfg.seed);

    RunArtifacts<R> out;
    HierTree tree;
    MappingStrategy strategy = mapping_strategy_from(cfg.mapping);
    int start_epoch = 0;
    std::optional<Network<R>> net;

    if (!resume_path.empty()) {
        Checkpoint<R> ckpt = load_checkpoint<R>(resume_path);
        LoadedHierarchy lh = hierarchy_from_text(ckpt.hierarchy_text);
        tree = std::move(lh.tree);
        strategy = lh.strategy;
        net = std::move(ckpt.net);
        start_epoch = ckpt.epoch;
        if (log) *log << "resuming from '" << resume_path << "' at epoch " << start_epoch << "\n";
    } else if (cfg.hierarchy == "singleton") {
        tree = HierTree::singletons(data.train.num_classes);
    } else if (cfg.hierarchy != "data-driven") {
        LoadedHierarchy lh = load_hierarchy(cfg.hierarchy);
        tree = std::move(lh.tree);
        strategy = lh.strategy;
        if (tree.num_classes != data.train.num_classes)
            throw config_error("hierarchy file covers " + std::to_string(tree.num_classes) + " classes, dataset has " +
                               std::to_string(data.train.num_classes));
    } else {
        if (log) *log << "stage 1: pretraining for hierarchy construction\n";
        std::ofstream s1metrics(fs::path(cfg.out_dir) / "stage1_metrics.csv");
        write_metrics_header(s1metrics);
        TrainedModel<R> stage1 = pretrain_model<R>(cfg, data, &s1metrics, log);
        double probe_acc = 0;
        tree = derive_hierarchy(stage1.net, data.train, split, cfg, &probe_acc);
        if (log) *log << "stage 1 probe accuracy " << probe_acc << ", hierarchy depth " << tree.depth_levels() << "\n";
        out.hierarchy_path = (fs::path(cfg.out_dir) / "hierarchy.txt").string();
        save_hierarchy(tree, strategy, out.hierarchy_path);
    }

    const auto levels = partitions_by_level(tree);
    const NetworkSpec spec = cfg.network_spec(data.train.num_classes, static_cast<int>(data.train.channels()));
    if (!net) {
        const LevelMapping mapping = LevelMapping::build(spec.layer_count(), tree.depth_levels(), strategy);
        net = build_network<R>(spec, mapping, cfg.seed, {cfg.weight_decay, cfg.decoupled_decay});
    }

    std::ofstream metrics_os;
    const fs::path metrics_path = fs::path(cfg.out_dir) / "metrics.csv";
    const bool fresh = !fs::exists(metrics_path) || start_epoch == 0;
    metrics_os.open(metrics_path, fresh ? std::ios::out : std::ios::app);
    if (fresh) write_metrics_header(metrics_os);

    if (log) *log << (start_epoch > 0 ? "continuing" : "stage 2: training under hierarchy") << "\n";
    const int end_epoch = stop_after > 0 ? std::min(stop_after, cfg.epochs) : cfg.epochs;
    out.metrics = train_epochs(*net, data.train, split, levels, cfg, cfg.lambda, start_epoch, end_epoch,
                               cfg.epochs, &metrics_os, log);

    // SIP interval on the validation split (training split as fallback).
    const int threads = cfg.threads > 0 ? cfg.threads : default_threads();
    const std::vector<std::size_t>& sip_idx = split.val.empty() ? split.train : split.val;
    EvalForward<R> vf = forward_dataset(*net, data.train, sip_idx, threads);
    const SipInterval sip = sip_select(vf.traces, vf.labels);
    if (log) *log << "sip interval [" << sip.s << "," << sip.e << "] val accuracy " << sip.val_accuracy << "\n";

    out.checkpoint.spec = spec;
    out.checkpoint.net = std::move(*net);
    out.checkpoint.hierarchy_text = hierarchy_to_text(tree, strategy);
    out.checkpoint.epoch = end_epoch;
    out.checkpoint.seed = cfg.seed;
    out.checkpoint.has_sip = true;
    out.checkpoint.sip = sip;
    out.checkpoint.config_text = cfg.raw_text;
    out.checkpoint_path = (fs::path(cfg.out_dir) / "model.ckpt").string();
    save_checkpoint(out.checkpoint, out.checkpoint_path);
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation report.
// ---------------------------------------------------------------------------

struct EvalReport {
    std::vector<double> fine;                   // per layer
    std::vector<std::vector<double>> super_acc; // [L][levels]
    int levels = 0;
    bool has_sip = false;
    SipInterval sip;
    double sip_acc = 0;
    double all_layers_acc = 0;
    double last_layer_acc = 0;
    double probe_before = -1, probe_after = -1;

    void write_csv(std::ostream& os) const {
        os.precision(10);
        os << "item,layer,level,value\n";
        for (std::size_t l = 0; l < fine.size(); ++l) {
            os << "fine_acc," << l << ",," << fine[l] << "\n";
            for (int lv = 0; lv < levels; ++lv)
                os << "super_acc," << l << "," << (lv + 1) << "," << super_acc[l][static_cast<std::size_t>(lv)]
                   << "\n";
        }
        if (has_sip) {
            os << "sip_s,,," << sip.s << "\n";
            os << "sip_e,,," << sip.e << "\n";
            os << "sip_val_acc,,," << sip.val_accuracy << "\n";
            os << "sip_acc,,," << sip_acc << "\n";
        }
        os << "all_layers_acc,,," << all_layers_acc << "\n";
        os << "last_layer_acc,,," << last_layer_acc << "\n";
        if (probe_before >= 0) os << "probe_before_norm,,," << probe_before << "\n";
        if (probe_after >= 0) os << "probe_after_norm,,," << probe_after << "\n";
    }
};

template <class R>
EvalReport evaluate_model(const Network<R>& net, const HierTree& tree, const Dataset<R>& test,
                          const std::optional<SipInterval>& sip, int threads,
                          const Dataset<R>* probe_train = nullptr,
                          const TrainValSplit* probe_split = nullptr, int probe_epochs = 100,
                          double probe_lr = 1e-3, uint64_t seed = 0) {
    std::vector<std::size_t> idx(test.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    EvalForward<R> tf = forward_dataset(net, test, idx, threads);

    EvalReport report;
    const auto levels = partitions_by_level(tree);
    PerLayerAccuracy acc = per_layer_accuracy(tf.traces, tf.labels, levels);
    report.fine = std::move(acc.fine);
    report.super_acc = std::move(acc.superclass);
    report.levels = static_cast<int>(levels.size());

    const int num_layers = static_cast<int>(net.layers.size());
    auto interval_acc = [&](const SipInterval& iv) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < tf.traces.size(); ++i)
            if (sip_predict(tf.traces[i], iv) == tf.labels[i]) ++correct;
        return static_cast<double>(correct) / static_cast<double>(tf.traces.size());
    };
    report.all_layers_acc = interval_acc({0, num_layers - 1, 0});
    report.last_layer_acc = interval_acc({num_layers - 1, num_layers - 1, 0});
    if (sip) {
        report.has_sip = true;
        report.sip = *sip;
        report.sip_acc = interval_acc(*sip);
    }

    if (probe_train && probe_split) {
        EvalForward<R> pf = forward_dataset(net, *probe_train, probe_split->train, threads);
        LinearProbe<R> after = linear_probe(pf.features, pf.labels, test.num_classes, tf.features, tf.labels,
                                            probe_epochs, probe_lr, seed);
        LinearProbe<R> before = linear_probe(pf.features_prenorm, pf.labels, test.num_classes, tf.features_prenorm,
                                             tf.labels, probe_epochs, probe_lr, seed);
        report.probe_after = after.accuracy;
        report.probe_before = before.accuracy;
    }
    return report;
}

}  // namespace hclff
