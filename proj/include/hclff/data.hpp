#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "hclff/common.hpp"
#include "hclff/hierarchy.hpp"
#include "hclff/tensor.hpp"

namespace hclff {

enum class Split { Train, Val, Test };

template <class R>
struct Dataset {
    Tensor<R> images;  // [N,C,H,W], values in [0,1]
    std::vector<int> labels;
    int num_classes = 0;
    Split split = Split::Train;

    std::size_t size() const { return labels.size(); }
    std::size_t channels() const { return images.dim(1); }
    std::size_t height() const { return images.dim(2); }
    std::size_t width() const { return images.dim(3); }

    Tensor<R> image(std::size_t i) const {
        const std::size_t chw = images.dim(1) * images.dim(2) * images.dim(3);
        Tensor<R> out({images.dim(1), images.dim(2), images.dim(3)});
        std::copy(images.data.begin() + static_cast<long>(i * chw),
                  images.data.begin() + static_cast<long>((i + 1) * chw), out.data.begin());
        return out;
    }

    void validate() const {
        if (labels.empty()) throw data_error("dataset: empty");
        if (images.rank() != 4 || images.dim(0) != labels.size())
            throw data_error("dataset: image/label count mismatch");
        if (num_classes < 1) throw data_error("dataset: bad class count");
        for (int l : labels)
            if (l < 0 || l >= num_classes) throw data_error("dataset: label out of range");
        for (const R& v : images.data)
            if (!(v >= R(0) && v <= R(1))) throw data_error("dataset: pixel outside [0,1]");
    }
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open '" + path + "'");
    is.seekg(0, std::ios::end);
    const auto len = is.tellg();
    is.seekg(0, std::ios::beg);
    std::vector<unsigned char> buf(static_cast<std::size_t>(len));
    if (len > 0) is.read(reinterpret_cast<char*>(buf.data()), len);
    if (!is) throw data_error("read failed for '" + path + "'");
    return buf;
}

inline uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::string& path) {
    if (offset + 4 > buf.size())
        throw data_error("'" + path + "': truncated at byte " + std::to_string(offset) + " (need 4 more)");
    return (static_cast<uint32_t>(buf[offset]) << 24) | (static_cast<uint32_t>(buf[offset + 1]) << 16) |
           (static_cast<uint32_t>(buf[offset + 2]) << 8) | static_cast<uint32_t>(buf[offset + 3]);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// IDX (MNIST family): big-endian headers, magic 0x00000803 for image files
// and 0x00000801 for label files, pixel bytes scaled by 1/255.
// ---------------------------------------------------------------------------

template <class R>
Dataset<R> load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto ibuf = detail::read_file(images_path);
    const auto lbuf = detail::read_file(labels_path);

    const uint32_t imagic = detail::read_be32(ibuf, 0, images_path);
    if (imagic != 0x00000803u)
        throw data_error("'" + images_path + "': bad image magic at byte 0 (expected 0x00000803, got 0x" +
                         [&] { char b[16]; std::snprintf(b, sizeof b, "%08x", imagic); return std::string(b); }() +
                         ")");
    const uint32_t n = detail::read_be32(ibuf, 4, images_path);
    const uint32_t h = detail::read_be32(ibuf, 8, images_path);
    const uint32_t w = detail::read_be32(ibuf, 12, images_path);
    const std::size_t expect = 16 + static_cast<std::size_t>(n) * h * w;
    if (ibuf.size() != expect)
        throw data_error("'" + images_path + "': pixel section has " + std::to_string(ibuf.size() - 16) +
                         " bytes, expected " + std::to_string(expect - 16));

    const uint32_t lmagic = detail::read_be32(lbuf, 0, labels_path);
    if (lmagic != 0x00000801u)
        throw data_error("'" + labels_path + "': bad label magic at byte 0 (expected 0x00000801)");
    const uint32_t ln = detail::read_be32(lbuf, 4, labels_path);
    if (ln != n)
        throw data_error("'" + labels_path + "': " + std::to_string(ln) + " labels for " + std::to_string(n) +
                         " images");
    if (lbuf.size() != 8 + static_cast<std::size_t>(ln))
        throw data_error("'" + labels_path + "': label section has " + std::to_string(lbuf.size() - 8) +
                         " bytes, expected " + std::to_string(ln));

    Dataset<R> ds;
    ds.images = Tensor<R>({n, 1, h, w});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* src = ibuf.data() + 16 + i * h * w;
        R* dst = &ds.images.data[i * h * w];
        for (std::size_t p = 0; p < static_cast<std::size_t>(h) * w; ++p)
            dst[p] = static_cast<R>(src[p]) / R(255);
        ds.labels[i] = static_cast<int>(lbuf[8 + i]);
    }
    int max_label = 0;
    for (int l : ds.labels) max_label = std::max(max_label, l);
    ds.num_classes = max_label + 1;
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary: 3073-byte records (1 label + 3 x 1024 channel planes).
// ---------------------------------------------------------------------------

template <class R>
Dataset<R> load_cifar10(const std::vector<std::string>& bin_paths) {
    if (bin_paths.empty()) throw data_error("cifar10: no input files");
    constexpr std::size_t kRecord = 3073;
    constexpr std::size_t kPlane = 1024;

    std::size_t total = 0;
    std::vector<std::vector<unsigned char>> bufs;
    for (const auto& path : bin_paths) {
        auto buf = detail::read_file(path);
        if (buf.empty() || buf.size() % kRecord != 0)
            throw data_error("'" + path + "': size " + std::to_string(buf.size()) +
                             " is not a positive multiple of 3073-byte records");
        total += buf.size() / kRecord;
        bufs.push_back(std::move(buf));
    }

    Dataset<R> ds;
    ds.images = Tensor<R>({total, 3, 32, 32});
    ds.labels.reserve(total);
    std::size_t img = 0;
    for (std::size_t f = 0; f < bufs.size(); ++f) {
        const auto& buf = bufs[f];
        for (std::size_t r = 0; r < buf.size() / kRecord; ++r, ++img) {
            const unsigned char* rec = buf.data() + r * kRecord;
            if (rec[0] > 9)
                throw data_error("'" + bin_paths[f] + "': record " + std::to_string(r) + " has label " +
                                 std::to_string(static_cast<int>(rec[0])) + " > 9");
            ds.labels.push_back(static_cast<int>(rec[0]));
            R* dst = &ds.images.data[img * 3 * kPlane];
            for (std::size_t p = 0; p < 3 * kPlane; ++p) dst[p] = static_cast<R>(rec[1 + p]) / R(255);
        }
    }
    ds.num_classes = 10;
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic hierarchical dataset. Classes are arranged on a complete binary
// tree: the split at tree level j is drawn on a 2^j x 2^j grid upsampled to
// the image, with weight 2^(1-j), so coarse splits dominate pixel structure
// and fine splits add small-scale detail. Returns the ground-truth tree.
// ---------------------------------------------------------------------------

template <class R>
struct SynthData {
    Dataset<R> train;
    Dataset<R> test;
    HierTree tree;
};

namespace detail {

inline HierTree complete_binary_tree(int num_classes, int levels) {
    HierTree tree;
    tree.num_classes = num_classes;
    HierTree::Node root;
    tree.nodes.push_back(root);
    tree.root = 0;
    // breadth-first: nodes at depth d cover contiguous index ranges
    struct Item {
        int node, lo, hi, depth;
    };
    std::vector<Item> stack{{0, 0, num_classes, 0}};
    while (!stack.empty()) {
        const Item it = stack.back();
        stack.pop_back();
        if (it.depth == levels) {
            tree.nodes[static_cast<std::size_t>(it.node)].class_id = it.lo;
            continue;
        }
        const int mid = (it.lo + it.hi) / 2;
        for (int half = 0; half < 2; ++half) {
            HierTree::Node child;
            child.parent = it.node;
            child.depth = it.depth + 1;
            tree.nodes.push_back(child);
            const int id = static_cast<int>(tree.nodes.size()) - 1;
            tree.nodes[static_cast<std::size_t>(it.node)].children.push_back(id);
            if (half == 0)
                stack.push_back({id, it.lo, mid, it.depth + 1});
            else
                stack.push_back({id, mid, it.hi, it.depth + 1});
        }
    }
    tree.padded = true;
    tree.validate();
    return tree;
}

}  // namespace detail

template <class R>
SynthData<R> synth_hier_dataset(int num_classes, int levels, int n_per_class, int image_size, uint64_t seed,
                                double noise_std = 0.08, int test_per_class = 0) {
    if (levels < 1 || num_classes != (1 << levels))
        throw argument_error("synth: need K = 2^levels, got K=" + std::to_string(num_classes) +
                             ", levels=" + std::to_string(levels));
    if (n_per_class < 1 || image_size < 4) throw argument_error("synth: bad size arguments");
    if (test_per_class <= 0) test_per_class = std::max(1, n_per_class / 4);

    const std::size_t s = static_cast<std::size_t>(image_size);

    // One zero-mean, unit-RMS block pattern per tree level, on a grid that
    // doubles with depth. Class k adds or subtracts each level's pattern
    // according to its bit at that level, with the weight halving per level,
    // so coarse splits dominate pixel distance with a guaranteed 4:1 ratio.
    std::vector<std::vector<double>> level_pattern(static_cast<std::size_t>(levels));
    for (int j = 0; j < levels; ++j) {
        const int grid = 1 << (j + 1);
        rng::Stream prng(rng::mix(seed, 0x9a77e54, static_cast<uint64_t>(j)));
        std::vector<double> cells(static_cast<std::size_t>(grid) * grid);
        double mean = 0;
        for (auto& c : cells) {
            c = prng.uniform(-1.0, 1.0);
            mean += c;
        }
        mean /= static_cast<double>(cells.size());
        double rms = 0;
        for (auto& c : cells) {
            c -= mean;
            rms += c * c;
        }
        rms = std::sqrt(rms / static_cast<double>(cells.size()));
        if (rms < 1e-9) rms = 1.0;
        for (auto& c : cells) c /= rms;
        std::vector<double> up(s * s);
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) {
                const std::size_t gy = y * static_cast<std::size_t>(grid) / s;
                const std::size_t gx = x * static_cast<std::size_t>(grid) / s;
                up[y * s + x] = cells[gy * static_cast<std::size_t>(grid) + gx];
            }
        // orthogonalize against the coarser levels so each bit contributes
        // an independent direction in pixel space, then restore unit RMS
        for (int prev = 0; prev < j; ++prev) {
            const auto& q = level_pattern[static_cast<std::size_t>(prev)];
            double dot = 0;
            for (std::size_t i = 0; i < s * s; ++i) dot += up[i] * q[i];
            dot /= static_cast<double>(s * s);  // q has unit RMS
            for (std::size_t i = 0; i < s * s; ++i) up[i] -= dot * q[i];
        }
        double urms = 0;
        for (std::size_t i = 0; i < s * s; ++i) urms += up[i] * up[i];
        urms = std::sqrt(urms / static_cast<double>(s * s));
        if (urms < 1e-9) urms = 1.0;
        for (std::size_t i = 0; i < s * s; ++i) up[i] /= urms;
        level_pattern[static_cast<std::size_t>(j)] = std::move(up);
    }

    std::vector<std::vector<double>> templates(static_cast<std::size_t>(num_classes),
                                               std::vector<double>(s * s, 0.5));
    for (int k = 0; k < num_classes; ++k) {
        for (int j = 0; j < levels; ++j) {
            const int bit = (k >> (levels - 1 - j)) & 1;
            const double w = 0.32 * std::pow(0.20, j) * (bit ? 1.0 : -1.0);
            const auto& p = level_pattern[static_cast<std::size_t>(j)];
            for (std::size_t i = 0; i < s * s; ++i) templates[static_cast<std::size_t>(k)][i] += w * p[i];
        }
    }

    auto make = [&](int per_class, uint64_t salt, Split split) {
        Dataset<R> ds;
        const std::size_t n = static_cast<std::size_t>(per_class) * static_cast<std::size_t>(num_classes);
        ds.images = Tensor<R>({n, 1, s, s});
        ds.labels.resize(n);
        ds.num_classes = num_classes;
        ds.split = split;
        for (std::size_t i = 0; i < n; ++i) {
            const int label = static_cast<int>(i % static_cast<std::size_t>(num_classes));
            ds.labels[i] = label;
            rng::Stream nrng(rng::mix(seed, salt, i));
            const auto& tpl = templates[static_cast<std::size_t>(label)];
            R* dst = &ds.images.data[i * s * s];
            for (std::size_t p = 0; p < s * s; ++p) {
                const double v = tpl[p] + (noise_std > 0 ? noise_std * nrng.normal() : 0.0);
                dst[p] = static_cast<R>(std::clamp(v, 0.0, 1.0));
            }
        }
        ds.validate();
        return ds;
    };

    SynthData<R> out;
    out.train = make(n_per_class, 0x7a1d, Split::Train);
    out.test = make(test_per_class, 0x7e57, Split::Test);
    out.tree = detail::complete_binary_tree(num_classes, levels);
    return out;
}

// Seeded train/validation split: the last `val_fraction` of a shuffled index
// vector becomes validation.
struct TrainValSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

inline TrainValSplit split_train_val(std::size_t n, double val_fraction, uint64_t seed) {
    if (n == 0) throw argument_error("split: empty dataset");
    if (val_fraction < 0 || val_fraction >= 1) throw argument_error("split: val_fraction outside [0,1)");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    rng::Stream srng(rng::mix(seed, 0x5b117, 0));
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[srng.uniform_int(i)]);
    const std::size_t nval = static_cast<std::size_t>(static_cast<double>(n) * val_fraction);
    TrainValSplit out;
    out.train.assign(idx.begin(), idx.end() - static_cast<long>(nval));
    out.val.assign(idx.end() - static_cast<long>(nval), idx.end());
    return out;
}

}  // namespace hclff
