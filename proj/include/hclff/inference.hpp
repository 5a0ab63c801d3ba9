#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hclff/layers.hpp"
#include "hclff/objectives.hpp"
#include "hclff/optim.hpp"
#include "hclff/tensor.hpp"

namespace hclff {

// Ties go to the lowest index everywhere a prediction is taken.
template <class R>
inline int argmax_lowest(const R* values, std::size_t n) {
    int best = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (values[i] > values[best]) best = static_cast<int>(i);
    return best;
}

template <class R>
inline int argmax_lowest(const Tensor<R>& t) {
    return argmax_lowest(t.data.data(), t.numel());
}

struct SipInterval {
    int s = 0;
    int e = 0;
    double val_accuracy = 0.0;
};

// Prediction from the mean goodness over layers [s, e] of one trace [L,K].
template <class R>
int sip_predict(const Tensor<R>& trace, const SipInterval& interval) {
    if (trace.rank() != 2) throw argument_error("sip_predict: trace must be [L,K]");
    const int l = static_cast<int>(trace.dim(0));
    const std::size_t k = trace.dim(1);
    if (interval.s < 0 || interval.e < interval.s || interval.e >= l)
        throw argument_error("sip_predict: interval outside [0," + std::to_string(l - 1) + "]");
    std::vector<R> mean(k, R(0));
    for (int row = interval.s; row <= interval.e; ++row)
        for (std::size_t j = 0; j < k; ++j) mean[j] += trace.at(static_cast<std::size_t>(row), j);
    const R inv = R(1) / static_cast<R>(interval.e - interval.s + 1);
    for (std::size_t j = 0; j < k; ++j) mean[j] *= inv;
    return argmax_lowest(mean.data(), k);
}

// Exhaustive interval selection on a validation set. Maximizes accuracy;
// ties prefer the shorter interval, then the larger start.
template <class R>
SipInterval sip_select(const std::vector<Tensor<R>>& val_traces, const std::vector<int>& val_labels) {
    if (val_traces.empty()) throw argument_error("sip_select: empty validation set");
    if (val_traces.size() != val_labels.size()) throw argument_error("sip_select: trace/label count mismatch");
    const std::size_t l = val_traces[0].dim(0), k = val_traces[0].dim(1);
    const std::size_t n = val_traces.size();
    for (const auto& t : val_traces)
        if (t.shape != std::vector<std::size_t>{l, k}) throw argument_error("sip_select: ragged traces");

    // prefix[i] = per-sample cumulative goodness over layers [0, i)
    std::vector<std::vector<double>> prefix(n, std::vector<double>((l + 1) * k, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t row = 0; row < l; ++row)
            for (std::size_t j = 0; j < k; ++j)
                prefix[i][(row + 1) * k + j] =
                    prefix[i][row * k + j] + static_cast<double>(val_traces[i].at(row, j));

    SipInterval best;
    bool have = false;
    std::vector<double> mean(k);
    for (int s = 0; s < static_cast<int>(l); ++s) {
        for (int e = s; e < static_cast<int>(l); ++e) {
            std::size_t correct = 0;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < k; ++j)
                    mean[j] = prefix[i][static_cast<std::size_t>(e + 1) * k + j] -
                              prefix[i][static_cast<std::size_t>(s) * k + j];
                if (argmax_lowest(mean.data(), k) == val_labels[i]) ++correct;
            }
            const double acc = static_cast<double>(correct) / static_cast<double>(n);
            const int len = e - s;
            const int blen = best.e - best.s;
            const bool better = !have || acc > best.val_accuracy ||
                                (acc == best.val_accuracy && (len < blen || (len == blen && s > best.s)));
            if (better) {
                best = {s, e, acc};
                have = true;
            }
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Per-layer accuracy: fine accuracy from per-layer argmax, plus super-class
// accuracy per hierarchy level via the group-mean goodness.
// ---------------------------------------------------------------------------

struct PerLayerAccuracy {
    std::vector<double> fine;                     // [L]
    std::vector<std::vector<double>> superclass;  // [L][levels]
};

template <class R>
PerLayerAccuracy per_layer_accuracy(const std::vector<Tensor<R>>& traces, const std::vector<int>& labels,
                                    const std::vector<SuperClassPartition>& levels) {
    if (traces.size() != labels.size()) throw argument_error("per_layer_accuracy: trace/label count mismatch");
    if (traces.empty()) return {};
    const std::size_t l = traces[0].dim(0), k = traces[0].dim(1);
    PerLayerAccuracy out;
    out.fine.assign(l, 0.0);
    out.superclass.assign(l, std::vector<double>(levels.size(), 0.0));
    for (std::size_t i = 0; i < traces.size(); ++i) {
        for (std::size_t row = 0; row < l; ++row) {
            Tensor<R> g({k});
            for (std::size_t j = 0; j < k; ++j) g[j] = traces[i].at(row, j);
            if (argmax_lowest(g) == labels[i]) out.fine[row] += 1.0;
            for (std::size_t lv = 0; lv < levels.size(); ++lv) {
                const Tensor<R> super = superclass_goodness(g, levels[lv]);
                if (argmax_lowest(super) == levels[lv].group_of(labels[i])) out.superclass[row][lv] += 1.0;
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(traces.size());
    for (std::size_t row = 0; row < l; ++row) {
        out.fine[row] *= inv;
        for (auto& v : out.superclass[row]) v *= inv;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear probe: softmax regression with Adam on frozen features.
// ---------------------------------------------------------------------------

template <class R>
struct LinearProbe {
    Tensor<R> weights;  // [K,D]
    Tensor<R> bias;     // [K]
    double accuracy = 0.0;  // on the held-out set
};

template <class R>
int probe_predict(const LinearProbe<R>& probe, const Tensor<R>& feature) {
    return argmax_lowest(linear(feature, probe.weights, probe.bias));
}

template <class R>
LinearProbe<R> linear_probe(const Tensor<R>& features, const std::vector<int>& labels, int num_classes,
                            const Tensor<R>& eval_features, const std::vector<int>& eval_labels, int epochs = 100,
                            double lr = 1e-3, uint64_t seed = 0, int batch_size = 128) {
    if (features.rank() != 2) throw argument_error("linear_probe: features must be [N,D]");
    const std::size_t n = features.dim(0), d = features.dim(1);
    if (labels.size() != n) throw argument_error("linear_probe: label count mismatch");
    if (n < static_cast<std::size_t>(num_classes))
        throw argument_error("linear_probe: fewer samples than classes");
    check_finite(features, "linear_probe features");

    LinearProbe<R> probe;
    probe.weights = Tensor<R>({static_cast<std::size_t>(num_classes), d});
    probe.bias = Tensor<R>({static_cast<std::size_t>(num_classes)});
    AdamState<R> w_adam(probe.weights.shape), b_adam(probe.bias.shape);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    Tensor<R> feat({d});
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng::Stream shuffle_rng(rng::mix(seed, static_cast<uint64_t>(epoch), 0x9d0be));
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
            const std::size_t stop = std::min(n, start + static_cast<std::size_t>(batch_size));
            Tensor<R> gw({static_cast<std::size_t>(num_classes), d});
            Tensor<R> gb({static_cast<std::size_t>(num_classes)});
            for (std::size_t bi = start; bi < stop; ++bi) {
                const std::size_t i = order[bi];
                for (std::size_t j = 0; j < d; ++j) feat[j] = features.at(i, j);
                const Tensor<R> logits = linear(feat, probe.weights, probe.bias);
                LossGrad<R> lg = softmax_xent(logits, labels[i]);
                const R scale_b = R(1) / static_cast<R>(stop - start);
                for (int c = 0; c < num_classes; ++c) {
                    const R g = lg.grad[static_cast<std::size_t>(c)] * scale_b;
                    gb[static_cast<std::size_t>(c)] += g;
                    R* row = &gw.data[static_cast<std::size_t>(c) * d];
                    for (std::size_t j = 0; j < d; ++j) row[j] += g * feat[j];
                }
            }
            adam_step(probe.weights, gw, w_adam, lr);
            adam_step(probe.bias, gb, b_adam, lr);
        }
    }

    if (eval_features.rank() == 2 && eval_features.dim(0) > 0) {
        const std::size_t m = eval_features.dim(0);
        if (eval_labels.size() != m) throw argument_error("linear_probe: eval label count mismatch");
        std::size_t correct = 0;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < d; ++j) feat[j] = eval_features.at(i, j);
            if (probe_predict(probe, feat) == eval_labels[i]) ++correct;
        }
        probe.accuracy = static_cast<double>(correct) / static_cast<double>(m);
    }
    return probe;
}

// ---------------------------------------------------------------------------
// Per-class goodness-map export. For each exported layer: a `layer,<l>` line,
// then per class a `class,<k>` header followed by H rows of W comma-separated
// spatial means over the class's channel subset. A trailing scalar table
// headed `layer,class,mean_goodness` lists the per-class mean goodness.
// ---------------------------------------------------------------------------

template <class R>
void export_goodness_maps(const std::vector<std::pair<int, LayerOutput<R>>>& outputs, int num_classes,
                          std::ostream& os) {
    os.precision(9);
    for (const auto& [layer_idx, lo] : outputs) {
        const std::size_t k = static_cast<std::size_t>(num_classes);
        const std::size_t c = lo.activations.dim(0), h = lo.activations.dim(1), w = lo.activations.dim(2);
        if (c % k != 0) throw argument_error("export_goodness_maps: channels not divisible by K");
        const std::size_t cp = c / k;
        os << "layer," << layer_idx << "\n";
        for (std::size_t cls = 0; cls < k; ++cls) {
            os << "class," << cls << "\n";
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    double acc = 0.0;
                    for (std::size_t ch = 0; ch < cp; ++ch)
                        acc += static_cast<double>(lo.activations.at(cls * cp + ch, y, x));
                    os << (x ? "," : "") << acc / static_cast<double>(cp);
                }
                os << "\n";
            }
        }
    }
    os << "layer,class,mean_goodness\n";
    for (const auto& [layer_idx, lo] : outputs)
        for (std::size_t cls = 0; cls < lo.goodness.numel(); ++cls)
            os << layer_idx << "," << cls << "," << static_cast<double>(lo.goodness[cls]) << "\n";
    if (!os) throw io_error("export_goodness_maps: write failed");
}

template <class R>
void export_goodness_maps(const std::vector<std::pair<int, LayerOutput<R>>>& outputs, int num_classes,
                          const std::string& path) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot open '" + path + "' for writing");
    export_goodness_maps(outputs, num_classes, os);
}

}  // namespace hclff
