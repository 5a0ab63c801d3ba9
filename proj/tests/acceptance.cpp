// Acceptance suite: one checkable criterion per function, each printing a
// single [PASS]/[FAIL] line. Run with no arguments for all criteria or with a
// list of criterion numbers.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "hclff/hclff.hpp"
#include "oracles.hpp"

namespace {

namespace fs = std::filesystem;
using hclff::Tensor;

struct Outcome {
    bool pass;
    std::string detail;
};

Tensor<double> rand_tensor(std::vector<std::size_t> shape, uint64_t seed, double lo = -1, double hi = 1) {
    hclff::rng::Stream rng(seed);
    Tensor<double> t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// values kept away from zero so ReLU kinks cannot corrupt the differences
Tensor<double> rand_tensor_offzero(std::vector<std::size_t> shape, uint64_t seed, double margin = 0.05) {
    hclff::rng::Stream rng(seed);
    Tensor<double> t(std::move(shape));
    for (double& v : t.data) {
        const double mag = rng.uniform(margin, 1.0);
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t;
}

double contract(const Tensor<double>& a, const Tensor<double>& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a.data[i] * b.data[i];
    return acc;
}

// ---------------------------------------------------------------------------
// 1. Gradient oracle suite.
// ---------------------------------------------------------------------------

Outcome criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst_primitive = 0, worst_composite = 0;
    const int trials = 20;

    for (int t = 0; t < trials; ++t) {
        const uint64_t s = 1000 + static_cast<uint64_t>(t) * 37;

        {  // conv2d: weights and input gradients
            const auto x = rand_tensor({2, 4, 4}, s);
            const auto w = rand_tensor({2, 2, 3, 3}, s + 1);
            const auto b = rand_tensor({2}, s + 2);
            const int stride = t % 2 ? 2 : 1;
            const auto dir = rand_tensor(hclff::conv2d(x, w, b, stride, 1).shape, s + 3);
            const auto g = hclff::conv2d_backward(x, w, dir, stride, 1);
            auto obj_w = [&](const std::vector<double>& flat) {
                Tensor<double> wx = w;
                wx.data = flat;
                return contract(hclff::conv2d(x, wx, b, stride, 1), dir);
            };
            auto obj_x = [&](const std::vector<double>& flat) {
                Tensor<double> xx = x;
                xx.data = flat;
                return contract(hclff::conv2d(xx, w, b, stride, 1), dir);
            };
            worst_primitive = std::max(worst_primitive,
                                       oracles::max_rel_err(g.weights.data, oracles::fd_gradient(obj_w, w.data)));
            worst_primitive = std::max(worst_primitive,
                                       oracles::max_rel_err(g.input.data, oracles::fd_gradient(obj_x, x.data)));
        }
        {  // relu
            const auto x = rand_tensor_offzero({3, 3, 3}, s + 10);
            const auto dir = rand_tensor(x.shape, s + 11);
            auto obj = [&](const std::vector<double>& flat) {
                Tensor<double> xx = x;
                xx.data = flat;
                return contract(hclff::relu(xx), dir);
            };
            worst_primitive = std::max(
                worst_primitive,
                oracles::max_rel_err(hclff::relu_backward(x, dir).data, oracles::fd_gradient(obj, x.data)));
        }
        {  // group_norm
            const auto x = rand_tensor({4, 2, 2}, s + 20);
            const auto dir = rand_tensor(x.shape, s + 21);
            auto obj = [&](const std::vector<double>& flat) {
                Tensor<double> xx = x;
                xx.data = flat;
                return contract(hclff::group_norm(xx, 2, 1e-5).normalized, dir);
            };
            worst_primitive = std::max(worst_primitive,
                                       oracles::max_rel_err(hclff::group_norm_backward(x, dir, 2, 1e-5).data,
                                                            oracles::fd_gradient(obj, x.data)));
        }
        {  // pooling
            const auto x = rand_tensor({2, 4, 4}, s + 30);
            const auto dir = rand_tensor({2, 2, 2}, s + 31);
            auto obj = [&](const std::vector<double>& flat) {
                Tensor<double> xx = x;
                xx.data = flat;
                return contract(hclff::avg_pool_2x2(xx), dir);
            };
            worst_primitive = std::max(worst_primitive,
                                       oracles::max_rel_err(hclff::avg_pool_2x2_backward(dir).data,
                                                            oracles::fd_gradient(obj, x.data)));
            const auto dir_g = rand_tensor({2}, s + 32);
            auto obj_g = [&](const std::vector<double>& flat) {
                Tensor<double> xx = x;
                xx.data = flat;
                return contract(hclff::global_avg_pool(xx), dir_g);
            };
            worst_primitive = std::max(worst_primitive,
                                       oracles::max_rel_err(hclff::global_avg_pool_backward(dir_g, 4, 4).data,
                                                            oracles::fd_gradient(obj_g, x.data)));
        }
        {  // linear
            const auto x = rand_tensor({6}, s + 40);
            const auto w = rand_tensor({3, 6}, s + 41);
            const auto b = rand_tensor({3}, s + 42);
            const auto dir = rand_tensor({3}, s + 43);
            const auto g = hclff::linear_backward(x, w, dir);
            auto obj_w = [&](const std::vector<double>& flat) {
                Tensor<double> wx = w;
                wx.data = flat;
                return contract(hclff::linear(x, wx, b), dir);
            };
            auto obj_x = [&](const std::vector<double>& flat) {
                Tensor<double> xx = x;
                xx.data = flat;
                return contract(hclff::linear(xx, w, b), dir);
            };
            worst_primitive = std::max(worst_primitive,
                                       oracles::max_rel_err(g.weights.data, oracles::fd_gradient(obj_w, w.data)));
            worst_primitive = std::max(worst_primitive,
                                       oracles::max_rel_err(g.input.data, oracles::fd_gradient(obj_x, x.data)));
        }
        {  // cwc and hiercwc
            hclff::rng::Stream rng(s + 50);
            Tensor<double> g({6});
            for (double& v : g.data) v = rng.uniform(-2, 2);
            const int label = static_cast<int>(rng.uniform_int(6));
            auto obj_c = [&](const std::vector<double>& flat) {
                Tensor<double> gx({6});
                gx.data = flat;
                return static_cast<double>(hclff::cwc_loss(gx, label).loss);
            };
            worst_primitive = std::max(worst_primitive, oracles::max_rel_err(hclff::cwc_loss(g, label).grad.data,
                                                                             oracles::fd_gradient(obj_c, g.data)));
            hclff::SuperClassPartition part{{{0, 5}, {1, 2}, {3, 4}}, 1};
            auto obj_h = [&](const std::vector<double>& flat) {
                Tensor<double> gx({6});
                gx.data = flat;
                return static_cast<double>(hclff::hiercwc_loss(gx, label, part).loss);
            };
            worst_primitive =
                std::max(worst_primitive, oracles::max_rel_err(hclff::hiercwc_loss(g, label, part).grad.data,
                                                               oracles::fd_gradient(obj_h, g.data)));
        }
        {  // supcon
            hclff::rng::Stream rng(s + 60);
            Tensor<double> h({5, 4});
            for (double& v : h.data) v = rng.uniform(-1, 1);
            const std::vector<int> labels{0, 1, 0, 2, 1};
            auto obj = [&](const std::vector<double>& flat) {
                Tensor<double> hx({5, 4});
                hx.data = flat;
                return static_cast<double>(hclff::supcon_loss(hx, labels, 0.4).loss);
            };
            worst_primitive =
                std::max(worst_primitive, oracles::max_rel_err(hclff::supcon_loss(h, labels, 0.4).grad.data,
                                                               oracles::fd_gradient(obj, h.data)));
        }
        {  // full local layer graph, both goodness modes
            for (hclff::GoodnessMode mode : {hclff::GoodnessMode::Mean, hclff::GoodnessMode::SumSquares}) {
                hclff::NetworkSpec spec;
                spec.block_widths = {4};
                spec.num_classes = 2;
                spec.in_channels = 2;
                spec.embed_dim = 6;
                spec.total_layers = 1;
                auto layer = hclff::init_layer<double>(spec, 0, 1, s + 70);
                for (double& v : layer.bias.data) v = 0.05;
                std::vector<Tensor<double>> inputs;
                bool clear = false;
                for (uint64_t attempt = 0; attempt < 50 && !clear; ++attempt) {
                    inputs = {rand_tensor({2, 3, 3}, s + 71 + attempt, 0, 1),
                              rand_tensor({2, 3, 3}, s + 171 + attempt, 0, 1),
                              rand_tensor({2, 3, 3}, s + 271 + attempt, 0, 1)};
                    clear = true;
                    for (const auto& x : inputs) {
                        const auto pre = hclff::conv2d(x, layer.weights, layer.bias, 1, 1);
                        for (double v : pre.data) clear = clear && std::abs(v) > 1e-4;
                    }
                }
                if (!clear) return {false, "could not find kink-free inputs for the composite check"};
                const std::vector<int> labels{0, 1, 0};
                const auto part = hclff::SuperClassPartition::singletons(2);
                const auto grads = hclff::cw_conv_local_grads(layer, inputs, labels, part, 1.0, 0.5, mode);
                auto obj = [&](const std::vector<double>& flat) {
                    auto c = layer;
                    c.weights.data = flat;
                    return hclff::cw_conv_local_grads(c, inputs, labels, part, 1.0, 0.5, mode).total_loss;
                };
                worst_composite = std::max(
                    worst_composite,
                    oracles::max_rel_err(grads.d_weights.data, oracles::fd_gradient(obj, layer.weights.data)));
            }
        }
    }

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream detail;
    detail << "worst primitive rel err " << worst_primitive << " (limit 1e-6), worst composite " << worst_composite
           << " (limit 1e-4), " << seconds << "s (limit 60)";
    return {worst_primitive <= 1e-6 && worst_composite <= 1e-4 && seconds <= 60.0, detail.str()};
}

// ---------------------------------------------------------------------------
// 2. Reduction identities.
// ---------------------------------------------------------------------------

Outcome criterion_reductions() {
    hclff::rng::Stream rng(2024);
    for (int t = 0; t < 50; ++t) {
        const std::size_t k = 2 + rng.uniform_int(11);
        Tensor<double> g({k});
        for (double& v : g.data) v = rng.uniform(-3, 3);
        const int label = static_cast<int>(rng.uniform_int(k));
        const auto direct = hclff::cwc_loss(g, label);
        const auto singleton = hclff::hiercwc_loss(g, label, hclff::SuperClassPartition::singletons(static_cast<int>(k)));
        if (singleton.loss != direct.loss) return {false, "singleton hiercwc loss differs bitwise from cwc"};
        for (std::size_t i = 0; i < k; ++i)
            if (singleton.grad[i] != direct.grad[i]) return {false, "singleton hiercwc grad differs bitwise"};

        hclff::SuperClassPartition part{{{}}, 1};
        part.groups.clear();
        std::vector<int> shuffled(k);
        for (std::size_t i = 0; i < k; ++i) shuffled[i] = static_cast<int>(i);
        for (std::size_t i = k; i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.uniform_int(i)]);
        std::size_t at = 0;
        while (at < k) {
            const std::size_t take = std::min<std::size_t>(1 + rng.uniform_int(3), k - at);
            part.groups.emplace_back(shuffled.begin() + static_cast<long>(at),
                                     shuffled.begin() + static_cast<long>(at + take));
            at += take;
        }
        const auto hier = hclff::hiercwc_loss(g, label, part);
        double sum = 0;
        for (std::size_t i = 0; i < k; ++i) sum += hier.grad[i];
        if (std::abs(sum) > 1e-12) return {false, "hiercwc gradient does not sum to zero"};
    }

    for (int t = 0; t < 20; ++t) {
        Tensor<double> h({2, 3});
        for (double& v : h.data) v = rng.uniform(-2, 2);
        const auto lg = hclff::supcon_loss(h, {5, 5}, 0.1 + rng.uniform());
        if (lg.loss != 0.0) return {false, "two-sample same-class contrastive loss is not exactly zero"};
    }
    return {true, "singleton reduction bitwise, zero-sum grads, exact zero two-sample loss"};
}

// ---------------------------------------------------------------------------
// 3. Decoupling suite (32-bit).
// ---------------------------------------------------------------------------

Outcome criterion_decoupling() {
    double worst_mean = 0;
    for (int t = 0; t < 100; ++t) {
        const uint64_t s = 3000 + static_cast<uint64_t>(t);
        hclff::NetworkSpec spec;
        spec.block_widths = {8};
        spec.num_classes = 4;
        spec.in_channels = 1;
        spec.embed_dim = 8;
        spec.total_layers = 1;
        auto layer = hclff::init_layer<float>(spec, 0, 1, s);
        const auto input = rand_tensor({1, 6, 6}, s + 500, 0, 1).cast<float>();
        const auto out = hclff::cw_conv_forward(layer, input, hclff::GoodnessMode::Mean);
        const std::size_t gsize = out.decoupled.numel() / 4;
        for (std::size_t g = 0; g < 4; ++g) {
            float mean = 0;
            for (std::size_t i = 0; i < gsize; ++i) mean += out.decoupled[g * gsize + i];
            worst_mean = std::max(worst_mean, std::abs(static_cast<double>(mean / static_cast<float>(gsize))));
        }

        const auto base = hclff::cw_conv_forward(layer, input, hclff::GoodnessMode::Mean);
        const int base_arg = hclff::argmax_lowest(base.goodness);
        for (float c : {0.1f, 1.0f, 10.0f}) {
            auto scaled = input;
            hclff::scale(scaled, c);
            const auto out_c = hclff::cw_conv_forward(layer, scaled, hclff::GoodnessMode::Mean);
            if (hclff::argmax_lowest(out_c.goodness) != base_arg)
                return {false, "goodness argmax changed under input scaling"};
        }
    }
    std::ostringstream detail;
    detail << "worst per-group mean " << worst_mean << " (limit 1e-6); argmax scale-invariant for c in {0.1,1,10}";
    return {worst_mean <= 1e-6, detail.str()};
}

// ---------------------------------------------------------------------------
// 4. Hierarchy suite.
// ---------------------------------------------------------------------------

Outcome criterion_hierarchy() {
    hclff::rng::Stream rng(4000);
    const std::vector<int> ks{4, 8, 10, 16};
    for (int t = 0; t < 50; ++t) {
        const int k = ks[static_cast<std::size_t>(t) % ks.size()];
        Tensor<double> w({static_cast<std::size_t>(k), 6});
        for (double& v : w.data) v = rng.uniform(-1, 1);
        const auto padded = hclff::pad_tree(hclff::build_tree(hclff::extract_prototypes(w)));
        std::size_t prev = 0;
        for (int level = 1; level <= padded.leaf_level(); ++level) {
            const auto part = hclff::partitions_at_level(padded, level);
            try {
                part.validate(k);
            } catch (const std::exception& e) {
                return {false, std::string("partition invalid: ") + e.what()};
            }
            if (part.num_groups() < prev) return {false, "group counts not monotone"};
            prev = part.num_groups();
        }
        if (prev != static_cast<std::size_t>(k)) return {false, "leaf level does not have K singletons"};

        for (auto strategy : {hclff::MappingStrategy::Balanced, hclff::MappingStrategy::Incremental,
                              hclff::MappingStrategy::Decremental}) {
            const int d = padded.depth_levels();
            int prev_level = 0;
            for (int layer = 0; layer < 17; ++layer) {
                const int level = hclff::layer_to_level(layer, d, strategy);
                if (level < prev_level) return {false, "layer_to_level not monotone"};
                prev_level = level;
            }
            if (hclff::layer_to_level(16, d, strategy) != d - 1)
                return {false, "layer 16 does not map to the leaf level"};
        }
    }

    for (int t = 0; t < 20; ++t) {
        const std::size_t k = 3 + rng.uniform_int(4);  // 3..6
        std::vector<std::vector<double>> rows(k, std::vector<double>(4));
        Tensor<double> w({k, 4});
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                rows[i][j] = rng.uniform(-1, 1);
                w.at(i, j) = rows[i][j];
            }
        const auto protos = hclff::extract_prototypes(w);
        std::vector<std::vector<double>> normalized(k, std::vector<double>(4));
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < 4; ++j) normalized[i][j] = protos.vectors.at(i, j);
        const auto expected = oracles::brute_force_ward(normalized);

        const auto tree = hclff::build_tree(protos);
        std::size_t step = 0;
        for (std::size_t i = k; i < tree.nodes.size(); ++i, ++step) {
            const auto& node = tree.nodes[i];
            auto a = tree.leaf_classes(node.children[0]);
            auto b = tree.leaf_classes(node.children[1]);
            if (a.front() > b.front()) std::swap(a, b);
            if (step >= expected.size() || a != expected[step].left || b != expected[step].right)
                return {false, "merge sequence differs from the brute-force oracle"};
        }
    }
    return {true, "50 padded trees valid and monotone; merges match the oracle on K<=6"};
}

// ---------------------------------------------------------------------------
// 5. SIP suite.
// ---------------------------------------------------------------------------

Outcome criterion_sip() {
    {  // worked two-layer example
        std::vector<Tensor<double>> traces;
        Tensor<double> t1({2, 2}), t2({2, 2});
        t1.at(0, 0) = 1;
        t1.at(1, 0) = 1;
        t2.at(0, 0) = 1;
        t2.at(1, 1) = 1;
        traces.push_back(t1);
        traces.push_back(t2);
        const auto best = hclff::sip_select(traces, {0, 1});
        if (best.s != 1 || best.e != 1 || best.val_accuracy != 1.0)
            return {false, "worked two-layer example not reproduced"};
    }
    hclff::rng::Stream rng(5000);
    for (int t = 0; t < 100; ++t) {
        const std::size_t layers = 17, classes = 10, n = 64;
        std::vector<Tensor<double>> traces;
        std::vector<std::vector<std::vector<double>>> raw(n);
        std::vector<int> labels;
        for (std::size_t i = 0; i < n; ++i) {
            Tensor<double> tr({layers, classes});
            raw[i].assign(layers, std::vector<double>(classes));
            for (std::size_t l = 0; l < layers; ++l)
                for (std::size_t c = 0; c < classes; ++c) {
                    const double v = rng.uniform(0, 1);
                    tr.at(l, c) = v;
                    raw[i][l][c] = v;
                }
            traces.push_back(std::move(tr));
            labels.push_back(static_cast<int>(rng.uniform_int(classes)));
        }
        const auto got = hclff::sip_select(traces, labels);
        const auto expect = oracles::exhaustive_interval_search(raw, labels);
        if (got.s != expect.s || got.e != expect.e || got.val_accuracy != expect.accuracy)
            return {false, "selected interval differs from the exhaustive oracle"};
    }
    return {true, "100 random trace sets match the exhaustive oracle; worked example reproduced"};
}

// ---------------------------------------------------------------------------
// 6. Pipeline determinism and resume.
// ---------------------------------------------------------------------------

bool nets_equal(const hclff::Network<float>& a, const hclff::Network<float>& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        if (a.layers[l].weights.data != b.layers[l].weights.data) return false;
        if (a.layers[l].bias.data != b.layers[l].bias.data) return false;
        if (a.layers[l].proj_w.data != b.layers[l].proj_w.data) return false;
        if (a.layers[l].proj_b.data != b.layers[l].proj_b.data) return false;
        if (a.layers[l].weights_adam.first_moment.data != b.layers[l].weights_adam.first_moment.data) return false;
        if (a.layers[l].weights_adam.second_moment.data != b.layers[l].weights_adam.second_moment.data) return false;
    }
    return true;
}

Outcome criterion_pipeline() {
    auto make_net = [](uint64_t seed) {
        hclff::NetworkSpec spec;
        spec.block_widths = {4};
        spec.num_classes = 2;
        spec.in_channels = 1;
        spec.embed_dim = 8;
        spec.total_layers = 3;
        return hclff::build_network<float>(spec, hclff::LevelMapping::build(3, 2, hclff::MappingStrategy::Balanced),
                                           seed);
    };
    auto synth = hclff::synth_hier_dataset<float>(2, 1, 40, 8, 66, 0.05);
    std::vector<std::size_t> idx(synth.train.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto levels = std::vector<hclff::SuperClassPartition>{hclff::SuperClassPartition::singletons(2)};
    hclff::ScheduleConfig sched;
    sched.total_epochs = 2;
    sched.warmup_epochs = 1;
    hclff::TrainOptions opt;
    opt.batch_size = 8;  // 80 samples -> 10 batches
    opt.seed = 66;
    opt.threads = 2;

    auto seq = make_net(66);
    hclff::train_epoch_sequential(seq, synth.train, idx, levels, sched, 0, opt);
    for (int capacity : {1, 2, 4}) {
        auto pipe = make_net(66);
        auto popt = opt;
        popt.queue_capacity = capacity;
        hclff::train_epoch_pipeline(pipe, synth.train, idx, levels, sched, 0, popt);
        if (!nets_equal(seq, pipe))
            return {false, "pipeline parameters differ from sequential at capacity " + std::to_string(capacity)};
    }

    // interrupt/resume at an epoch boundary
    const auto dir = fs::temp_directory_path() / "hclff_acceptance_resume";
    fs::remove_all(dir);
    std::istringstream cfg_text(
        "dataset = synth\nsynth_classes = 2\nsynth_levels = 1\nsynth_per_class = 24\nsynth_image_size = 8\n"
        "widths = 4\ntotal_layers = 3\nepochs = 3\nbatch_size = 8\nhierarchy = singleton\nval_every = 0\nseed = 9\n");
    auto cfg = hclff::parse_config(cfg_text);
    auto cfg_full = cfg;
    cfg_full.out_dir = (dir / "full").string();
    const auto full = hclff::run_two_stage<float>(cfg_full);
    auto cfg_part = cfg;
    cfg_part.out_dir = (dir / "part").string();
    const auto part = hclff::run_two_stage<float>(cfg_part, nullptr, "", 2);
    auto cfg_resume = cfg;
    cfg_resume.out_dir = (dir / "resume").string();
    const auto resumed = hclff::run_two_stage<float>(cfg_resume, nullptr, part.checkpoint_path);
    if (!nets_equal(full.checkpoint.net, resumed.checkpoint.net))
        return {false, "resumed run differs bitwise from the uninterrupted run"};
    return {true, "pipeline bitwise equal at capacities {1,2,4}; interrupt/resume bitwise equal"};
}

// ---------------------------------------------------------------------------
// 7. MNIST smoke run.
// ---------------------------------------------------------------------------

std::string mnist_dir() {
    if (const char* env = std::getenv("HCLFF_MNIST_DIR")) return env;
    for (const char* candidate : {"data/mnist", "../data/mnist", "../../data/mnist", "../../../data/mnist"})
        if (fs::exists(fs::path(candidate) / "train-images-idx3-ubyte")) return candidate;
    return "data/mnist";
}

Outcome criterion_mnist_smoke() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string dir = mnist_dir();
    if (!fs::exists(fs::path(dir) / "train-images-idx3-ubyte")) {
        return {false,
                "MNIST IDX files not found under '" + dir +
                    "' (set HCLFF_MNIST_DIR or run scripts/fetch_mnist.sh; this sandbox has no network egress, "
                    "so the files cannot be downloaded here)"};
    }
    std::ostringstream cfg_text;
    cfg_text << "dataset = mnist\n"
             << "data_dir = " << dir << "\n"
             << "train_limit = 10000\n"
             << "widths = 20\n"
             << "epochs = 5\n"
             << "batch_size = 128\n"
             << "lambda = 1\n"
             << "hierarchy = singleton\n"
             << "augment = none\n"
             << "val_every = 0\n"
             << "warmup_epochs = 2\n"
             << "seed = 1\n";
    std::istringstream in(cfg_text.str());
    auto cfg = hclff::parse_config(in);
    cfg.out_dir = (fs::temp_directory_path() / "hclff_mnist_smoke").string();

    const auto artifacts = hclff::run_two_stage<float>(cfg, &std::cout);
    const auto data = hclff::load_data<float>(cfg);
    const auto hierarchy = hclff::hierarchy_from_text(artifacts.checkpoint.hierarchy_text);
    const auto report = hclff::evaluate_model(artifacts.checkpoint.net, hierarchy.tree, data.test,
                                              artifacts.checkpoint.sip, hclff::default_threads());
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    std::ostringstream detail;
    detail << "SIP test accuracy " << report.sip_acc << " on " << data.test.size() << " images (need >= 0.92), "
           << minutes << " min (limit 30)";
    return {report.sip_acc >= 0.92 && minutes <= 30.0, detail.str()};
}

// ---------------------------------------------------------------------------
// 8. Synthetic end-to-end two-stage run.
// ---------------------------------------------------------------------------

Outcome criterion_synthetic() {
    std::istringstream cfg_text(
        "dataset = synth\n"
        "synth_classes = 8\n"
        "synth_levels = 3\n"
        "synth_per_class = 100\n"
        "synth_image_size = 16\n"
        "synth_noise = 0.15\n"
        "widths = 24\n"
        "total_layers = 5\n"
        "epochs = 10\n"
        "stage1_epochs = 8\n"
        "batch_size = 32\n"
        "lambda = 1\n"
        "probe_epochs = 60\n"
        "warmup_epochs = 4\n"
        "val_every = 0\n"
        "seed = 12\n");
    auto cfg = hclff::parse_config(cfg_text);
    cfg.out_dir = (fs::temp_directory_path() / "hclff_synth_e2e").string();
    fs::remove_all(cfg.out_dir);

    const auto artifacts = hclff::run_two_stage<float>(cfg, nullptr);
    const auto data = hclff::load_data<float>(cfg);
    const auto truth = hclff::synth_hier_dataset<float>(8, 3, 1, 16, cfg.seed).tree;

    const auto recovered = hclff::hierarchy_from_text(artifacts.checkpoint.hierarchy_text).tree;
    const auto got_level1 = hclff::partitions_at_level(recovered, 1);
    const auto want_level1 = hclff::partitions_at_level(truth, 1);
    if (got_level1.groups != want_level1.groups) {
        std::ostringstream detail;
        detail << "recovered level-1 partition does not match the generator's coarse split:";
        for (const auto& g : got_level1.groups) {
            detail << " {";
            for (int c : g) detail << c << ",";
            detail << "}";
        }
        return {false, detail.str()};
    }

    std::vector<std::size_t> idx(data.test.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto fwd = hclff::forward_dataset(artifacts.checkpoint.net, data.test, idx, hclff::default_threads());
    const auto levels = hclff::partitions_by_level(recovered);
    const auto acc = hclff::per_layer_accuracy(fwd.traces, fwd.labels, levels);
    const double super0 = acc.superclass[0][0];
    const double fine0 = acc.fine[0];
    std::ostringstream detail;
    detail << "coarse split recovered; layer-0 level-1 super acc " << super0 << " vs fine acc " << fine0
           << " (need gap >= 0.10)";
    return {super0 - fine0 >= 0.10, detail.str()};
}

// ---------------------------------------------------------------------------
// 9. Format suite.
// ---------------------------------------------------------------------------

Outcome criterion_formats() {
    const auto dir = fs::temp_directory_path() / "hclff_formats";
    fs::create_directories(dir);
    hclff::rng::Stream rng(9000);

    {  // IDX round trip, bit exact
        const std::size_t n = 4, h = 9, w = 7;
        std::vector<unsigned char> ibuf{0x00, 0x00, 0x08, 0x03};
        auto be32 = [&](std::vector<unsigned char>& buf, uint32_t v) {
            buf.push_back(static_cast<unsigned char>(v >> 24));
            buf.push_back(static_cast<unsigned char>(v >> 16));
            buf.push_back(static_cast<unsigned char>(v >> 8));
            buf.push_back(static_cast<unsigned char>(v));
        };
        be32(ibuf, n);
        be32(ibuf, h);
        be32(ibuf, w);
        std::vector<unsigned char> pixels(n * h * w);
        for (auto& p : pixels) p = static_cast<unsigned char>(rng.uniform_int(256));
        ibuf.insert(ibuf.end(), pixels.begin(), pixels.end());
        std::vector<unsigned char> lbuf{0x00, 0x00, 0x08, 0x01};
        be32(lbuf, n);
        std::vector<unsigned char> labels{3, 1, 9, 0};
        lbuf.insert(lbuf.end(), labels.begin(), labels.end());

        const auto ipath = dir / "imgs", lpath = dir / "labels";
        std::ofstream(ipath, std::ios::binary).write(reinterpret_cast<char*>(ibuf.data()), static_cast<long>(ibuf.size()));
        std::ofstream(lpath, std::ios::binary).write(reinterpret_cast<char*>(lbuf.data()), static_cast<long>(lbuf.size()));
        const auto ds = hclff::load_idx<double>(ipath.string(), lpath.string());
        for (std::size_t i = 0; i < pixels.size(); ++i) {
            const auto back = static_cast<unsigned char>(std::lround(ds.images.data[i] * 255.0));
            if (back != pixels[i]) return {false, "IDX pixel round trip not bit exact"};
        }
        for (std::size_t i = 0; i < n; ++i)
            if (ds.labels[i] != static_cast<int>(labels[i])) return {false, "IDX label round trip failed"};

        // malformed: truncation must be diagnosed, never returned
        ibuf.resize(ibuf.size() - 1);
        std::ofstream(dir / "trunc", std::ios::binary)
            .write(reinterpret_cast<char*>(ibuf.data()), static_cast<long>(ibuf.size()));
        try {
            hclff::load_idx<double>((dir / "trunc").string(), lpath.string());
            return {false, "truncated IDX file was accepted"};
        } catch (const hclff::data_error&) {
        }
    }

    {  // CIFAR round trip
        const std::size_t n = 3;
        std::vector<unsigned char> buf(n * 3073);
        for (std::size_t r = 0; r < n; ++r) {
            buf[r * 3073] = static_cast<unsigned char>(r * 3);
            for (std::size_t p = 1; p < 3073; ++p) buf[r * 3073 + p] = static_cast<unsigned char>(rng.uniform_int(256));
        }
        const auto path = dir / "cifar.bin";
        std::ofstream(path, std::ios::binary).write(reinterpret_cast<char*>(buf.data()), static_cast<long>(buf.size()));
        const auto ds = hclff::load_cifar10<double>({path.string()});
        for (std::size_t r = 0; r < n; ++r) {
            if (ds.labels[r] != static_cast<int>(buf[r * 3073])) return {false, "CIFAR label mismatch"};
            for (std::size_t p = 0; p < 3072; ++p) {
                const auto back = static_cast<unsigned char>(std::lround(ds.images.data[r * 3072 + p] * 255.0));
                if (back != buf[r * 3073 + 1 + p]) return {false, "CIFAR pixel round trip not bit exact"};
            }
        }
        std::ofstream(dir / "cifar_bad.bin", std::ios::binary).write(reinterpret_cast<char*>(buf.data()), 3072);
        try {
            hclff::load_cifar10<double>({(dir / "cifar_bad.bin").string()});
            return {false, "bad CIFAR file was accepted"};
        } catch (const hclff::data_error&) {
        }
    }

    {  // hierarchy text round trip + diagnostics
        Tensor<double> w({10, 5});
        for (double& v : w.data) v = rng.uniform(-1, 1);
        const auto tree = hclff::pad_tree(hclff::build_tree(hclff::extract_prototypes(w)));
        std::ostringstream first;
        hclff::save_hierarchy(tree, hclff::MappingStrategy::Balanced, first);
        std::istringstream back(first.str());
        const auto loaded = hclff::load_hierarchy(back);
        std::ostringstream second;
        hclff::save_hierarchy(loaded.tree, loaded.strategy, second);
        if (first.str() != second.str()) return {false, "hierarchy text round trip changed the file"};

        std::istringstream overlapping(
            "classes=4\ndepth=3\nstrategy=balanced\nlevel 1: {0,1} {1,2,3}\nlevel 2: {0} {1} {2} {3}\n");
        try {
            hclff::load_hierarchy(overlapping);
            return {false, "overlapping hierarchy groups were accepted"};
        } catch (const hclff::data_error& e) {
            if (std::string(e.what()).find("line 4") == std::string::npos)
                return {false, "overlap diagnostic does not name the offending line"};
        }
    }
    return {true, "IDX/CIFAR bit-exact round trips, hierarchy text idempotent, malformed inputs diagnosed"};
}

struct Criterion {
    int number;
    const char* label;
    Outcome (*fn)();
};

const Criterion kCriteria[] = {
    {1, "gradient oracle suite", criterion_gradients},
    {2, "reduction identities", criterion_reductions},
    {3, "decoupling suite", criterion_decoupling},
    {4, "hierarchy suite", criterion_hierarchy},
    {5, "SIP suite", criterion_sip},
    {6, "pipeline determinism and resume", criterion_pipeline},
    {7, "MNIST smoke run", criterion_mnist_smoke},
    {8, "synthetic end-to-end", criterion_synthetic},
    {9, "format suite", criterion_formats},
};

}  // namespace

int main(int argc, char** argv) {
    std::vector<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
    int failures = 0;
    for (const auto& criterion : kCriteria) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), criterion.number) == wanted.end()) continue;
        Outcome outcome{false, "exception"};
        try {
            outcome = criterion.fn();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        std::cout << (outcome.pass ? "[PASS]" : "[FAIL]") << " criterion " << criterion.number << " ("
                  << criterion.label << "): " << outcome.detail << std::endl;
        if (!outcome.pass) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
