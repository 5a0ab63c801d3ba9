#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hclff/common.hpp"
#include "hclff/hierarchy.hpp"
#include "hclff/objectives.hpp"
#include "hclff/ops.hpp"
#include "hclff/optim.hpp"

namespace hclff {

// Normalization epsilons. Group normalization and the vector-length variant
// share the same floor; Adam keeps its own inside AdamState.
inline constexpr double kGroupNormEps = 1e-5;

enum class GoodnessMode { SumSquares, Mean };

inline std::string to_string(GoodnessMode m) { return m == GoodnessMode::Mean ? "mean" : "sum_squares"; }
inline GoodnessMode goodness_mode_from(const std::string& s) {
    if (s == "mean") return GoodnessMode::Mean;
    if (s == "sum_squares") return GoodnessMode::SumSquares;
    throw config_error("unknown goodness mode '" + s + "'");
}

// One trainable layer: convolution parameters, per-parameter Adam state, and
// the linear projection head used by the contrastive term.
template <class R>
struct LayerState {
    Tensor<R> weights;  // [Cout,Cin,kh,kw]
    Tensor<R> bias;     // [Cout]
    Tensor<R> proj_w;   // [E,Cout]
    Tensor<R> proj_b;   // [E]
    AdamState<R> weights_adam, bias_adam, proj_w_adam, proj_b_adam;
    int num_classes = 0;
    int hierarchy_level = 1;
    int stride = 1;
    int layer_index = 0;

    int out_channels() const { return static_cast<int>(weights.dim(0)); }
    int in_channels() const { return static_cast<int>(weights.dim(1)); }
    int padding() const { return static_cast<int>(weights.dim(2) / 2); }

    void validate() const {
        if (num_classes < 1) throw argument_error("layer: num_classes must be positive");
        if (out_channels() % num_classes != 0 || out_channels() < num_classes)
            throw config_error("layer " + std::to_string(layer_index) + ": width " +
                               std::to_string(out_channels()) + " must be a positive multiple of K=" +
                               std::to_string(num_classes));
        if (proj_w.rank() != 2 || proj_w.dim(1) != static_cast<std::size_t>(out_channels()))
            throw argument_error("layer: projection head shape mismatch");
    }
};

// Per-sample products of one layer: post-ReLU activations, per-class
// goodness, the goodness-decoupled feature, and the contrastive embedding.
template <class R>
struct LayerOutput {
    Tensor<R> activations;  // [Cout,H',W']
    Tensor<R> goodness;     // [K]
    Tensor<R> decoupled;    // [Cout,H',W']
    Tensor<R> embedding;    // [E]
};

template <class R>
struct CwConvCache {
    Tensor<R> pre;     // conv output before ReLU
    Tensor<R> pooled;  // GAP of decoupled [Cout]
    LayerOutput<R> out;
};

namespace detail {

// Sum-of-squares goodness with per-subset vector-length normalization:
// g_k = sum(y_k^2),  z_k = y_k / sqrt(g_k / n_k + eps).
template <class R>
void sumsquares_decouple(const Tensor<R>& y, std::size_t groups, Tensor<R>& goodness, Tensor<R>& z) {
    const std::size_t gsize = y.numel() / groups;
    goodness = Tensor<R>({groups});
    z = Tensor<R>(y.shape);
    for (std::size_t g = 0; g < groups; ++g) {
        const R* ys = &y.data[g * gsize];
        R* zs = &z.data[g * gsize];
        R sq = R(0);
        for (std::size_t i = 0; i < gsize; ++i) sq += ys[i] * ys[i];
        goodness[g] = sq;
        const R denom = std::sqrt(sq / static_cast<R>(gsize) + static_cast<R>(kGroupNormEps));
        for (std::size_t i = 0; i < gsize; ++i) zs[i] = ys[i] / denom;
    }
}

// Backward of sumsquares_decouple through z only (the goodness path is
// handled separately): dy_j = dz_j/s - y_j * (sum_i dz_i y_i) / (n s^3).
template <class R>
Tensor<R> sumsquares_decouple_backward(const Tensor<R>& y, const Tensor<R>& dz, std::size_t groups) {
    const std::size_t gsize = y.numel() / groups;
    Tensor<R> dy(y.shape);
    for (std::size_t g = 0; g < groups; ++g) {
        const R* ys = &y.data[g * gsize];
        const R* ds = &dz.data[g * gsize];
        R* os = &dy.data[g * gsize];
        R sq = R(0), dot = R(0);
        for (std::size_t i = 0; i < gsize; ++i) {
            sq += ys[i] * ys[i];
            dot += ds[i] * ys[i];
        }
        const R s2 = sq / static_cast<R>(gsize) + static_cast<R>(kGroupNormEps);
        const R s = std::sqrt(s2);
        const R coef = dot / (static_cast<R>(gsize) * s2 * s);
        for (std::size_t i = 0; i < gsize; ++i) os[i] = ds[i] / s - ys[i] * coef;
    }
    return dy;
}

}  // namespace detail

// Forward pass of one CW-Conv layer: conv -> ReLU -> channel partition into K
// subsets -> per-class goodness -> decoupling -> projection embedding.
template <class R>
CwConvCache<R> cw_conv_forward_cached(const LayerState<R>& layer, const Tensor<R>& input, GoodnessMode mode) {
    layer.validate();
    if (input.rank() != 3 || static_cast<int>(input.dim(0)) != layer.in_channels())
        throw argument_error("cw_conv: input " + input.shape_str() + " does not match layer with " +
                             std::to_string(layer.in_channels()) + " input channels");

    CwConvCache<R> cache;
    cache.pre = conv2d(input, layer.weights, layer.bias, layer.stride, layer.padding());
    cache.out.activations = relu(cache.pre);
    const std::size_t k = static_cast<std::size_t>(layer.num_classes);
    if (mode == GoodnessMode::Mean) {
        if (cache.out.activations.numel() / k >= 2) {
            GroupNormOut<R> gn = group_norm(cache.out.activations, k, kGroupNormEps);
            cache.out.goodness = std::move(gn.mean);
            cache.out.decoupled = std::move(gn.normalized);
        } else {
            // single-element subsets: the mean is the value, the variance is
            // zero, so the decoupled output is identically zero
            cache.out.goodness = cache.out.activations.reshaped({k});
            cache.out.decoupled = Tensor<R>(cache.out.activations.shape);
        }
    } else {
        detail::sumsquares_decouple(cache.out.activations, k, cache.out.goodness, cache.out.decoupled);
    }
    cache.pooled = global_avg_pool(cache.out.decoupled);
    cache.out.embedding = linear(cache.pooled, layer.proj_w, layer.proj_b);
    return cache;
}

template <class R>
LayerOutput<R> cw_conv_forward(const LayerState<R>& layer, const Tensor<R>& input, GoodnessMode mode) {
    return cw_conv_forward_cached(layer, input, mode).out;
}

// ---------------------------------------------------------------------------
// Layer-local objective and update. The layer sees its input as a constant:
// gradients reach only this layer's convolution and projection head.
// ---------------------------------------------------------------------------

template <class R>
struct LocalGrads {
    double hier_loss = 0;   // batch mean of the hierarchical competitive loss
    double con_loss = 0;    // contrastive batch sum divided by N
    double total_loss = 0;  // hier + lambda * con
    Tensor<R> d_weights, d_bias, d_proj_w, d_proj_b;
    Tensor<R> goodness;                // [N,K], computed with current weights
    std::vector<Tensor<R>> features;   // decoupled outputs for forwarding
};

template <class R>
LocalGrads<R> cw_conv_local_grads(const LayerState<R>& layer, const std::vector<Tensor<R>>& inputs,
                                  const std::vector<int>& labels, const SuperClassPartition& partition,
                                  double lambda, double tau, GoodnessMode mode, int threads = 1,
                                  SupconReduction reduction = SupconReduction::Sum) {
    const std::size_t n = inputs.size();
    if (n == 0) throw argument_error("local update: empty batch");
    if (labels.size() != n) throw argument_error("local update: label count mismatch");
    if (lambda < 0) throw argument_error("local update: lambda must be non-negative");
    partition.validate(layer.num_classes);

    const std::size_t k = static_cast<std::size_t>(layer.num_classes);
    const std::size_t e = layer.proj_w.dim(0);

    std::vector<CwConvCache<R>> caches(n);
    parallel_for(n, [&](std::size_t i) { caches[i] = cw_conv_forward_cached(layer, inputs[i], mode); }, threads);

    LocalGrads<R> out;
    out.goodness = Tensor<R>({n, k});
    Tensor<R> embeddings({n, e});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) out.goodness.at(i, j) = caches[i].out.goodness[j];
        for (std::size_t d = 0; d < e; ++d) embeddings.at(i, d) = caches[i].out.embedding[d];
    }

    // Hierarchical term: per-sample grads, averaged over the batch.
    std::vector<Tensor<R>> dgood(n);
    double hier_sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        LossGrad<R> lg = hiercwc_loss(caches[i].out.goodness, labels[i], partition);
        hier_sum += static_cast<double>(lg.loss);
        dgood[i] = std::move(lg.grad);
        scale(dgood[i], static_cast<R>(1.0 / static_cast<double>(n)));
    }
    out.hier_loss = hier_sum / static_cast<double>(n);

    // Contrastive term on the projected embeddings; batch sum scaled by 1/N.
    Tensor<R> dembed({n, e});
    if (lambda > 0 && n >= 2) {
        LossGrad<R> sc = supcon_loss(embeddings, labels, tau, reduction);
        out.con_loss = static_cast<double>(sc.loss) / static_cast<double>(n);
        dembed = std::move(sc.grad);
        scale(dembed, static_cast<R>(lambda / static_cast<double>(n)));
    }
    out.total_loss = total_loss(out.hier_loss, out.con_loss, lambda);

    // Per-sample backward into fixed accumulation chunks (sample i goes to
    // chunk i % kReductionChunks; chunks summed in index order afterwards).
    const std::size_t chunks = std::min<std::size_t>(kReductionChunks, n);
    std::vector<Tensor<R>> gw(chunks), gb(chunks), gpw(chunks), gpb(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
        gw[c] = zeros_like(layer.weights);
        gb[c] = zeros_like(layer.bias);
        gpw[c] = zeros_like(layer.proj_w);
        gpb[c] = zeros_like(layer.proj_b);
    }
    out.features.resize(n);

    parallel_for(
        chunks,
        [&](std::size_t c) {
            for (std::size_t i = c; i < n; i += chunks) {
                CwConvCache<R>& cache = caches[i];
                const std::size_t gsize = cache.out.activations.numel() / k;

                // projection head
                Tensor<R> dh({e});
                for (std::size_t d = 0; d < e; ++d) dh[d] = dembed.at(i, d);
                LinearGrads<R> pg = linear_backward(cache.pooled, layer.proj_w, dh);
                axpy(gpw[c], pg.weights);
                axpy(gpb[c], pg.bias);

                // decoupled-feature path
                Tensor<R> dz = global_avg_pool_backward(pg.input, cache.out.decoupled.dim(1),
                                                        cache.out.decoupled.dim(2));
                Tensor<R> dy;
                if (mode == GoodnessMode::Mean) {
                    // single-element subsets normalize to a constant zero, so
                    // nothing flows back through the decoupled path
                    dy = gsize >= 2 ? group_norm_backward(cache.out.activations, dz, k, kGroupNormEps)
                                    : Tensor<R>(cache.out.activations.shape);
                } else {
                    dy = detail::sumsquares_decouple_backward(cache.out.activations, dz, k);
                }

                // goodness path
                if (mode == GoodnessMode::Mean) {
                    for (std::size_t g = 0; g < k; ++g) {
                        const R share = dgood[i][g] / static_cast<R>(gsize);
                        R* ys = &dy.data[g * gsize];
                        for (std::size_t j = 0; j < gsize; ++j) ys[j] += share;
                    }
                } else {
                    for (std::size_t g = 0; g < k; ++g) {
                        const R dgk = dgood[i][g];
                        const R* ys = &cache.out.activations.data[g * gsize];
                        R* ds = &dy.data[g * gsize];
                        for (std::size_t j = 0; j < gsize; ++j) ds[j] += R(2) * dgk * ys[j];
                    }
                }

                Tensor<R> dpre = relu_backward(cache.pre, dy);
                Conv2dGrads<R> cg =
                    conv2d_backward(inputs[i], layer.weights, dpre, layer.stride, layer.padding(), false);
                axpy(gw[c], cg.weights);
                axpy(gb[c], cg.bias);

                out.features[i] = std::move(cache.out.decoupled);
            }
        },
        threads);

    out.d_weights = std::move(gw[0]);
    out.d_bias = std::move(gb[0]);
    out.d_proj_w = std::move(gpw[0]);
    out.d_proj_b = std::move(gpb[0]);
    for (std::size_t c = 1; c < chunks; ++c) {
        axpy(out.d_weights, gw[c]);
        axpy(out.d_bias, gb[c]);
        axpy(out.d_proj_w, gpw[c]);
        axpy(out.d_proj_b, gpb[c]);
    }
    return out;
}

template <class R>
struct LocalUpdateResult {
    double hier_loss = 0;
    double con_loss = 0;
    double total_loss = 0;
    Tensor<R> goodness;               // [N,K] pre-update
    std::vector<Tensor<R>> features;  // pre-update decoupled outputs
};

// One local training step: compute the combined objective, update this
// layer's parameters with Adam, and hand downstream the features computed
// with the pre-update weights.
template <class R>
LocalUpdateResult<R> cw_conv_local_update(LayerState<R>& layer, const std::vector<Tensor<R>>& inputs,
                                          const std::vector<int>& labels, const SuperClassPartition& partition,
                                          double lambda, double tau, double lr, GoodnessMode mode,
                                          int threads = 1, SupconReduction reduction = SupconReduction::Sum) {
    LocalGrads<R> g = cw_conv_local_grads(layer, inputs, labels, partition, lambda, tau, mode, threads, reduction);
    adam_step(layer.weights, g.d_weights, layer.weights_adam, lr);
    adam_step(layer.bias, g.d_bias, layer.bias_adam, lr);
    adam_step(layer.proj_w, g.d_proj_w, layer.proj_w_adam, lr);
    adam_step(layer.proj_b, g.d_proj_b, layer.proj_b_adam, lr);
    LocalUpdateResult<R> out;
    out.hier_loss = g.hier_loss;
    out.con_loss = g.con_loss;
    out.total_loss = g.total_loss;
    out.goodness = std::move(g.goodness);
    out.features = std::move(g.features);
    return out;
}

// ---------------------------------------------------------------------------
// Parameter-free residual merging.
//   boundary=false: elementwise sum, shapes must match exactly.
//   boundary=true : channel concat (main first); a shortcut at twice the
//                   spatial resolution is 2x2 average-pooled first.
// ---------------------------------------------------------------------------

template <class R>
Tensor<R> residual_merge(const Tensor<R>& main, const Tensor<R>& shortcut, bool boundary) {
    if (main.rank() != 3 || shortcut.rank() != 3)
        throw argument_error("residual_merge: tensors must be [C,H,W]");
    if (!boundary) {
        if (!main.same_shape(shortcut))
            throw argument_error("residual_merge: within-block shapes differ: " + main.shape_str() + " vs " +
                                 shortcut.shape_str());
        Tensor<R> out = main;
        axpy(out, shortcut);
        return out;
    }
    if (shortcut.dim(0) != main.dim(0))
        throw argument_error("residual_merge: boundary shortcut channels " + std::to_string(shortcut.dim(0)) +
                             " != main channels " + std::to_string(main.dim(0)));
    const std::size_t h = main.dim(1), w = main.dim(2);
    Tensor<R> aligned;
    if (shortcut.dim(1) == h && shortcut.dim(2) == w) {
        aligned = shortcut;
    } else if (shortcut.dim(1) == 2 * h && shortcut.dim(2) == 2 * w) {
        aligned = avg_pool_2x2(shortcut);
    } else {
        throw argument_error("residual_merge: boundary shortcut " + shortcut.shape_str() +
                             " is neither at nor at twice the main resolution " + main.shape_str());
    }
    Tensor<R> out({2 * main.dim(0), h, w});
    std::copy(main.data.begin(), main.data.end(), out.data.begin());
    std::copy(aligned.data.begin(), aligned.data.end(), out.data.begin() + static_cast<long>(main.numel()));
    return out;
}

// ---------------------------------------------------------------------------
// Network assembly: a stem layer followed by residual blocks of four CW-Conv
// layers. The first layer of every block after the first runs at stride 2 and
// consumes the channel-concatenated block transition.
//
// Shortcut wiring (all merge endpoints share the block's working resolution):
//   z1 = L(4b+1)(block input)        stride 2 for blocks >= 2
//   z2 = L(4b+2)(z1);  m1 = z2 + z1
//   z3 = L(4b+3)(m1)
//   z4 = L(4b+4)(z3);  m2 = z4 + m1  (shortcut spans the last layer pair)
//   next block input = concat(m2, pool-if-needed(this block's input))
// ---------------------------------------------------------------------------

struct NetworkSpec {
    std::vector<int> block_widths{40, 80, 160, 320};
    int layers_per_block = 4;
    int num_classes = 10;
    GoodnessMode goodness_mode = GoodnessMode::Mean;
    int in_channels = 1;
    int embed_dim = 128;
    int kernel = 3;
    int total_layers = 0;  // 0 means the full stem + blocks * layers_per_block

    int layer_count() const {
        return total_layers > 0 ? total_layers
                                : 1 + static_cast<int>(block_widths.size()) * layers_per_block;
    }

    void validate() const {
        if (block_widths.empty()) throw config_error("network: need at least one block width");
        if (layers_per_block != 4) throw config_error("network: residual blocks are four layers");
        if (num_classes < 2) throw config_error("network: need at least 2 classes");
        if (kernel < 1 || kernel % 2 == 0) throw config_error("network: kernel must be odd");
        if (in_channels < 1) throw config_error("network: in_channels must be positive");
        if (embed_dim < 1) throw config_error("network: embed_dim must be positive");
        for (int w : block_widths)
            if (w < num_classes || w % num_classes != 0)
                throw config_error("network: block width " + std::to_string(w) +
                                   " must be a positive multiple of K=" + std::to_string(num_classes));
        const int max_layers = 1 + static_cast<int>(block_widths.size()) * layers_per_block;
        if (layer_count() < 1 || layer_count() > max_layers)
            throw config_error("network: total_layers out of range [1," + std::to_string(max_layers) + "]");
    }

    int block_of(int layer) const { return layer == 0 ? 0 : (layer - 1) / layers_per_block; }
    int pos_in_block(int layer) const { return layer == 0 ? -1 : (layer - 1) % layers_per_block; }

    int layer_out_channels(int layer) const {
        return layer == 0 ? block_widths[0] : block_widths[static_cast<std::size_t>(block_of(layer))];
    }
    int layer_in_channels(int layer) const {
        if (layer == 0) return in_channels;
        const int b = block_of(layer);
        if (pos_in_block(layer) > 0) return block_widths[static_cast<std::size_t>(b)];
        return b == 0 ? block_widths[0] : 2 * block_widths[static_cast<std::size_t>(b - 1)];
    }
    int layer_stride(int layer) const {
        return layer > 0 && pos_in_block(layer) == 0 && block_of(layer) > 0 ? 2 : 1;
    }
};

template <class R>
struct Network {
    NetworkSpec spec;
    std::vector<LayerState<R>> layers;
};

struct OptimizerSettings {
    double weight_decay = 0.0;
    bool decoupled_decay = true;
};

template <class R>
LayerState<R> init_layer(const NetworkSpec& spec, int layer_index, int hierarchy_level, uint64_t seed,
                         const OptimizerSettings& optim = {}) {
    LayerState<R> layer;
    layer.layer_index = layer_index;
    layer.num_classes = spec.num_classes;
    layer.hierarchy_level = hierarchy_level;
    layer.stride = spec.layer_stride(layer_index);

    const std::size_t cout = static_cast<std::size_t>(spec.layer_out_channels(layer_index));
    const std::size_t cin = static_cast<std::size_t>(spec.layer_in_channels(layer_index));
    const std::size_t kk = static_cast<std::size_t>(spec.kernel);

    layer.weights = Tensor<R>({cout, cin, kk, kk});
    layer.bias = Tensor<R>({cout});
    layer.proj_w = Tensor<R>({static_cast<std::size_t>(spec.embed_dim), cout});
    layer.proj_b = Tensor<R>({static_cast<std::size_t>(spec.embed_dim)});

    rng::Stream conv_rng(rng::mix(seed, static_cast<uint64_t>(layer_index), 0));
    const double conv_limit = std::sqrt(6.0 / static_cast<double>(cin * kk * kk));
    for (R& v : layer.weights.data) v = static_cast<R>(conv_rng.uniform(-conv_limit, conv_limit));

    rng::Stream proj_rng(rng::mix(seed, static_cast<uint64_t>(layer_index), 1));
    const double proj_limit = std::sqrt(6.0 / static_cast<double>(cout));
    for (R& v : layer.proj_w.data) v = static_cast<R>(proj_rng.uniform(-proj_limit, proj_limit));

    layer.weights_adam = AdamState<R>(layer.weights.shape);
    layer.bias_adam = AdamState<R>(layer.bias.shape);
    layer.proj_w_adam = AdamState<R>(layer.proj_w.shape);
    layer.proj_b_adam = AdamState<R>(layer.proj_b.shape);
    for (AdamState<R>* a : {&layer.weights_adam, &layer.bias_adam, &layer.proj_w_adam, &layer.proj_b_adam}) {
        a->weight_decay = optim.weight_decay;
        a->decoupled_decay = optim.decoupled_decay;
    }
    return layer;
}

template <class R>
Network<R> build_network(const NetworkSpec& spec, const LevelMapping& mapping, uint64_t seed,
                         const OptimizerSettings& optim = {}) {
    spec.validate();
    if (static_cast<int>(mapping.assignment.size()) != spec.layer_count())
        throw config_error("network: level mapping covers " + std::to_string(mapping.assignment.size()) +
                           " layers, network has " + std::to_string(spec.layer_count()));
    Network<R> net;
    net.spec = spec;
    net.layers.reserve(static_cast<std::size_t>(spec.layer_count()));
    for (int l = 0; l < spec.layer_count(); ++l)
        net.layers.push_back(init_layer<R>(spec, l, mapping.assignment[static_cast<std::size_t>(l)], seed, optim));
    return net;
}

// Per-sample tensors that travel between layers: the next layer's input plus
// the two live shortcut sources.
template <class R>
struct FlowState {
    Tensor<R> input;
    Tensor<R> block_input;
    Tensor<R> unit_shortcut;
};

// Threads a freshly produced decoupled feature through the shortcut wiring,
// leaving fs.input ready for layer `layer_index + 1`.
template <class R>
void advance_flow(const NetworkSpec& spec, int layer_index, Tensor<R>&& z, FlowState<R>& fs) {
    if (layer_index == 0) {
        fs.block_input = z;
        fs.input = std::move(z);
        fs.unit_shortcut = Tensor<R>();
        return;
    }
    const int pos = spec.pos_in_block(layer_index);
    const bool last_layer = layer_index + 1 >= spec.layer_count();
    const bool last_block = spec.block_of(layer_index) + 1 >= static_cast<int>(spec.block_widths.size());
    switch (pos) {
        case 0:
            fs.unit_shortcut = z;
            fs.input = std::move(z);
            break;
        case 1: {
            Tensor<R> merged = residual_merge(z, fs.unit_shortcut, false);
            fs.unit_shortcut = merged;
            fs.input = std::move(merged);
            break;
        }
        case 2:
            fs.input = std::move(z);
            break;
        case 3: {
            Tensor<R> block_out = residual_merge(z, fs.unit_shortcut, false);
            if (last_layer || last_block) {
                fs.input = std::move(block_out);
            } else {
                Tensor<R> merged = residual_merge(block_out, fs.block_input, true);
                fs.block_input = merged;
                fs.input = std::move(merged);
            }
            fs.unit_shortcut = Tensor<R>();
            break;
        }
        default:
            throw argument_error("advance_flow: bad layer index");
    }
}

// Full inference pass: per-layer goodness rows plus the final layer's
// global-average-pooled decoupled feature.
template <class R>
struct NetworkForward {
    Tensor<R> trace;                  // [L,K]
    Tensor<R> final_features;         // [C_last], GAP of the decoupled output
    Tensor<R> final_prenorm;          // [C_last], GAP of the raw activations
    std::vector<LayerOutput<R>> outputs;  // populated when keep_outputs
};

template <class R>
NetworkForward<R> forward_network(const Network<R>& net, const Tensor<R>& image, bool keep_outputs = false) {
    const std::size_t l = net.layers.size();
    const std::size_t k = static_cast<std::size_t>(net.spec.num_classes);
    NetworkForward<R> out;
    out.trace = Tensor<R>({l, k});
    FlowState<R> fs;
    fs.input = image;
    for (std::size_t i = 0; i < l; ++i) {
        LayerOutput<R> lo = cw_conv_forward(net.layers[i], fs.input, net.spec.goodness_mode);
        for (std::size_t j = 0; j < k; ++j) out.trace.at(i, j) = lo.goodness[j];
        if (i + 1 == l) {
            out.final_features = global_avg_pool(lo.decoupled);
            out.final_prenorm = global_avg_pool(lo.activations);
        }
        Tensor<R> z;
        if (keep_outputs) {
            z = lo.decoupled;
            out.outputs.push_back(std::move(lo));
        } else {
            z = std::move(lo.decoupled);
        }
        advance_flow(net.spec, static_cast<int>(i), std::move(z), fs);
    }
    return out;
}

}  // namespace hclff
