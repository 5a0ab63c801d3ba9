#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hclff/tensor.hpp"

namespace hclff {

// Disjoint non-empty groups of fine-class indices covering {0..K-1}.
struct SuperClassPartition {
    std::vector<std::vector<int>> groups;
    int level = 0;

    std::size_t num_groups() const { return groups.size(); }

    void validate(int num_classes) const {
        std::vector<int> seen(static_cast<std::size_t>(num_classes), 0);
        for (const auto& g : groups) {
            if (g.empty()) throw argument_error("partition: empty group");
            for (int c : g) {
                if (c < 0 || c >= num_classes)
                    throw argument_error("partition: class " + std::to_string(c) + " out of range");
                if (seen[static_cast<std::size_t>(c)]++)
                    throw argument_error("partition: class " + std::to_string(c) + " appears in two groups");
            }
        }
        for (int c = 0; c < num_classes; ++c)
            if (!seen[static_cast<std::size_t>(c)])
                throw argument_error("partition: class " + std::to_string(c) + " not covered");
    }

    int group_of(int cls) const {
        for (std::size_t j = 0; j < groups.size(); ++j)
            for (int c : groups[j])
                if (c == cls) return static_cast<int>(j);
        throw argument_error("partition: class " + std::to_string(cls) + " in no group");
    }

    static SuperClassPartition singletons(int num_classes) {
        SuperClassPartition p;
        p.groups.reserve(static_cast<std::size_t>(num_classes));
        for (int c = 0; c < num_classes; ++c) p.groups.push_back({c});
        p.level = 0;
        return p;
    }
};

template <class R>
struct LossGrad {
    R loss;
    Tensor<R> grad;
};

// Max-shifted softmax cross-entropy: loss = -log softmax(v)[target],
// grad = softmax(v) - onehot(target).
template <class R>
LossGrad<R> softmax_xent(const Tensor<R>& values, int target) {
    const std::size_t n = values.numel();
    if (n == 0) throw argument_error("softmax_xent: empty input");
    if (target < 0 || static_cast<std::size_t>(target) >= n)
        throw argument_error("softmax_xent: target " + std::to_string(target) + " out of range");
    check_finite(values, "softmax_xent input");

    R vmax = values[0];
    for (std::size_t i = 1; i < n; ++i) vmax = std::max(vmax, values[i]);
    LossGrad<R> out{R(0), Tensor<R>({n})};
    R denom = R(0);
    for (std::size_t i = 0; i < n; ++i) {
        out.grad[i] = std::exp(values[i] - vmax);
        denom += out.grad[i];
    }
    for (std::size_t i = 0; i < n; ++i) out.grad[i] /= denom;
    out.loss = -(values[static_cast<std::size_t>(target)] - vmax - std::log(denom));
    out.grad[static_cast<std::size_t>(target)] -= R(1);
    return out;
}

// Channel-wise competitive loss over the K per-class goodness values.
template <class R>
LossGrad<R> cwc_loss(const Tensor<R>& goodness, int label) {
    return softmax_xent(goodness, label);
}

// Mean goodness per super-class group.
template <class R>
Tensor<R> superclass_goodness(const Tensor<R>& goodness, const SuperClassPartition& partition) {
    partition.validate(static_cast<int>(goodness.numel()));
    Tensor<R> out({partition.num_groups()});
    for (std::size_t j = 0; j < partition.num_groups(); ++j) {
        R acc = R(0);
        for (int c : partition.groups[j]) acc += goodness[static_cast<std::size_t>(c)];
        out[j] = acc / static_cast<R>(partition.groups[j].size());
    }
    return out;
}

// Competitive loss at super-class granularity. The gradient of each group's
// softmax term is distributed uniformly over the group's members.
template <class R>
LossGrad<R> hiercwc_loss(const Tensor<R>& goodness, int fine_label, const SuperClassPartition& partition) {
    const int k = static_cast<int>(goodness.numel());
    if (fine_label < 0 || fine_label >= k)
        throw argument_error("hiercwc: label " + std::to_string(fine_label) + " out of range");
    const Tensor<R> super = superclass_goodness(goodness, partition);
    const int target = partition.group_of(fine_label);
    LossGrad<R> at_super = softmax_xent(super, target);
    LossGrad<R> out{at_super.loss, Tensor<R>({static_cast<std::size_t>(k)})};
    for (std::size_t j = 0; j < partition.num_groups(); ++j) {
        const R share = at_super.grad[j] / static_cast<R>(partition.groups[j].size());
        for (int c : partition.groups[j]) out.grad[static_cast<std::size_t>(c)] = share;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Supervised contrastive loss on a batch of embeddings.
//
// Embeddings are L2-normalized internally, so sim(.,.) is cosine similarity.
// Anchors with no same-class comparator contribute zero and the result is a
// plain sum over anchors; mean_over_valid_anchors divides by the number of
// anchors with at least one positive.
// ---------------------------------------------------------------------------

enum class SupconReduction { Sum, MeanOverValidAnchors };

template <class R>
LossGrad<R> supcon_loss(const Tensor<R>& embeddings, const std::vector<int>& labels, double tau,
                        SupconReduction reduction = SupconReduction::Sum) {
    if (embeddings.rank() != 2) throw argument_error("supcon: embeddings must be [N,E]");
    const std::size_t n = embeddings.dim(0), e = embeddings.dim(1);
    if (n < 2) throw argument_error("supcon: need at least 2 samples");
    if (labels.size() != n) throw argument_error("supcon: label count mismatch");
    if (!(tau > 0)) throw argument_error("supcon: temperature must be positive");
    check_finite(embeddings, "supcon embeddings");

    // Normalize rows; remember norms for the backward pass.
    Tensor<R> unit({n, e});
    std::vector<R> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        R sq = R(0);
        for (std::size_t d = 0; d < e; ++d) sq += embeddings.at(i, d) * embeddings.at(i, d);
        const R norm = std::max(std::sqrt(sq), static_cast<R>(1e-12));
        norms[i] = norm;
        for (std::size_t d = 0; d < e; ++d) unit.at(i, d) = embeddings.at(i, d) / norm;
    }

    Tensor<R> sim({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            R acc = R(0);
            for (std::size_t d = 0; d < e; ++d) acc += unit.at(i, d) * unit.at(j, d);
            sim.at(i, j) = acc;
        }

    const R inv_tau = static_cast<R>(1.0 / tau);
    R loss = R(0);
    std::size_t valid_anchors = 0;
    Tensor<R> coeff({n, n});  // d(loss)/d(sim[i][j]) from anchor i's terms
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t positives = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) ++positives;
        if (positives == 0) continue;
        ++valid_anchors;

        R smax = -std::numeric_limits<R>::infinity();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) smax = std::max(smax, sim.at(i, j) * inv_tau);
        R denom = R(0);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) denom += std::exp(sim.at(i, j) * inv_tau - smax);
        const R log_denom = std::log(denom) + smax;

        const R inv_p = R(1) / static_cast<R>(positives);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const R soft = std::exp(sim.at(i, j) * inv_tau - smax) / denom;
            R c = soft * inv_tau;
            if (labels[j] == labels[i]) {
                loss += inv_p * (log_denom - sim.at(i, j) * inv_tau);
                c -= inv_p * inv_tau;
            }
            coeff.at(i, j) = c;
        }
    }

    R scale_out = R(1);
    if (reduction == SupconReduction::MeanOverValidAnchors && valid_anchors > 0)
        scale_out = R(1) / static_cast<R>(valid_anchors);

    // grad wrt unit vectors, then through the normalization.
    LossGrad<R> out{loss * scale_out, Tensor<R>({n, e})};
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<R> gu(e, R(0));
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const R c = coeff.at(i, j) + coeff.at(j, i);
            if (c == R(0)) continue;
            for (std::size_t d = 0; d < e; ++d) gu[d] += c * unit.at(j, d);
        }
        // project out the radial component: dh = (gu - (gu . u) u) / ||h||
        R dot = R(0);
        for (std::size_t d = 0; d < e; ++d) dot += gu[d] * unit.at(i, d);
        for (std::size_t d = 0; d < e; ++d)
            out.grad.at(i, d) = scale_out * (gu[d] - dot * unit.at(i, d)) / norms[i];
    }
    return out;
}

// Combined layer objective: hierarchical term plus weighted contrastive term.
inline double total_loss(double hier, double con, double lambda) {
    if (lambda < 0) throw argument_error("total_loss: lambda must be non-negative");
    return hier + lambda * con;
}

}  // namespace hclff
