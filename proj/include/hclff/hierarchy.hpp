#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hclff/objectives.hpp"
#include "hclff/tensor.hpp"

namespace hclff {

// L2-normalized class prototype directions, one row per class.
struct ClassPrototypes {
    Tensor<double> vectors;  // [K,D]
};

template <class R>
ClassPrototypes extract_prototypes(const Tensor<R>& classifier_weights) {
    if (classifier_weights.rank() != 2 || classifier_weights.dim(0) < 2)
        throw argument_error("prototypes: expected [K,D] with K >= 2");
    check_finite(classifier_weights, "prototypes");
    ClassPrototypes out;
    out.vectors = Tensor<double>({classifier_weights.dim(0), classifier_weights.dim(1)});
    const std::size_t k = classifier_weights.dim(0), d = classifier_weights.dim(1);
    for (std::size_t i = 0; i < k; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double v = static_cast<double>(classifier_weights.at(i, j));
            sq += v * v;
        }
        if (sq == 0.0)
            throw argument_error("prototypes: class " + std::to_string(i) + " has a zero weight row");
        const double inv = 1.0 / std::sqrt(sq);
        for (std::size_t j = 0; j < d; ++j)
            out.vectors.at(i, j) = static_cast<double>(classifier_weights.at(i, j)) * inv;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Class tree. Root at depth 0; each leaf carries one class; after padding all
// leaves sit at depth leaf_level and every depth in [1, leaf_level] induces a
// partition of the class set.
// ---------------------------------------------------------------------------

struct HierTree {
    struct Node {
        int parent = -1;
        std::vector<int> children;
        int class_id = -1;  // >= 0 on leaves
        int depth = 0;
    };
    std::vector<Node> nodes;
    int root = -1;
    int num_classes = 0;
    bool padded = false;

    int leaf_level() const {
        int lv = 0;
        for (const auto& n : nodes)
            if (n.children.empty()) lv = std::max(lv, n.depth);
        return lv;
    }

    // Depth levels including the root level, i.e. leaf_level + 1.
    int depth_levels() const { return leaf_level() + 1; }

    std::vector<int> leaf_classes(int node) const {
        std::vector<int> out;
        std::vector<int> stack{node};
        while (!stack.empty()) {
            const int id = stack.back();
            stack.pop_back();
            if (nodes[static_cast<std::size_t>(id)].children.empty()) {
                out.push_back(nodes[static_cast<std::size_t>(id)].class_id);
            } else {
                const auto& ch = nodes[static_cast<std::size_t>(id)].children;
                for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    void validate() const {
        if (root < 0 || nodes.empty()) throw argument_error("hierarchy: empty tree");
        std::vector<int> seen(static_cast<std::size_t>(num_classes), 0);
        for (const auto& n : nodes) {
            if (n.children.empty()) {
                if (n.class_id < 0 || n.class_id >= num_classes)
                    throw argument_error("hierarchy: leaf with class out of range");
                if (seen[static_cast<std::size_t>(n.class_id)]++)
                    throw argument_error("hierarchy: class " + std::to_string(n.class_id) + " on two leaves");
            }
        }
        for (int c = 0; c < num_classes; ++c)
            if (!seen[static_cast<std::size_t>(c)])
                throw argument_error("hierarchy: class " + std::to_string(c) + " missing a leaf");
        if (padded) {
            const int lv = leaf_level();
            for (const auto& n : nodes)
                if (n.children.empty() && n.depth != lv)
                    throw argument_error("hierarchy: padded tree has a leaf above the leaf level");
        }
    }

    static HierTree singletons(int num_classes) {
        HierTree t;
        t.num_classes = num_classes;
        t.root = 0;
        Node root;
        root.depth = 0;
        t.nodes.push_back(root);
        for (int c = 0; c < num_classes; ++c) {
            Node leaf;
            leaf.parent = 0;
            leaf.class_id = c;
            leaf.depth = 1;
            t.nodes.push_back(leaf);
            t.nodes[0].children.push_back(static_cast<int>(t.nodes.size()) - 1);
        }
        t.padded = true;
        return t;
    }
};

// ---------------------------------------------------------------------------
// Agglomerative clustering with Ward linkage via the Lance-Williams update on
// squared Euclidean distances between the normalized prototypes. On the unit
// sphere squared Euclidean distance is twice the cosine distance, so the
// merge order matches clustering on cosine distances directly. Ties pick the
// pair whose (min cluster representative, max representative) is smallest,
// where a cluster's representative is its smallest class index.
// ---------------------------------------------------------------------------

inline HierTree build_tree(const ClassPrototypes& protos) {
    const int k = static_cast<int>(protos.vectors.dim(0));
    const std::size_t d = protos.vectors.dim(1);
    if (k < 2) throw argument_error("build_tree: need at least 2 classes");

    struct Cluster {
        int node;      // index into tree nodes
        int rep;       // smallest class index inside
        double size;   // member count
        bool alive;
    };

    HierTree tree;
    tree.num_classes = k;
    std::vector<Cluster> clusters;
    clusters.reserve(static_cast<std::size_t>(2 * k - 1));
    for (int c = 0; c < k; ++c) {
        HierTree::Node leaf;
        leaf.class_id = c;
        tree.nodes.push_back(leaf);
        clusters.push_back({c, c, 1.0, true});
    }

    // dist[a][b]: Lance-Williams squared distances, symmetric.
    std::vector<std::vector<double>> dist(static_cast<std::size_t>(2 * k - 1),
                                          std::vector<double>(static_cast<std::size_t>(2 * k - 1), 0.0));
    for (int a = 0; a < k; ++a)
        for (int b = a + 1; b < k; ++b) {
            double sq = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = protos.vectors.at(static_cast<std::size_t>(a), j) -
                                    protos.vectors.at(static_cast<std::size_t>(b), j);
                sq += diff * diff;
            }
            dist[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = sq;
            dist[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)] = sq;
        }

    std::vector<int> alive;
    for (int c = 0; c < k; ++c) alive.push_back(c);

    while (alive.size() > 1) {
        double best = std::numeric_limits<double>::infinity();
        std::pair<int, int> best_key{std::numeric_limits<int>::max(), std::numeric_limits<int>::max()};
        int bi = -1, bj = -1;
        for (std::size_t x = 0; x < alive.size(); ++x)
            for (std::size_t y = x + 1; y < alive.size(); ++y) {
                const int a = alive[x], b = alive[y];
                const double dd = dist[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
                std::pair<int, int> key{std::min(clusters[static_cast<std::size_t>(a)].rep,
                                                 clusters[static_cast<std::size_t>(b)].rep),
                                        std::max(clusters[static_cast<std::size_t>(a)].rep,
                                                 clusters[static_cast<std::size_t>(b)].rep)};
                if (dd < best || (dd == best && key < best_key)) {
                    best = dd;
                    best_key = key;
                    bi = a;
                    bj = b;
                }
            }

        HierTree::Node merged;
        merged.children = {clusters[static_cast<std::size_t>(bi)].node, clusters[static_cast<std::size_t>(bj)].node};
        tree.nodes.push_back(merged);
        const int mnode = static_cast<int>(tree.nodes.size()) - 1;
        tree.nodes[static_cast<std::size_t>(clusters[static_cast<std::size_t>(bi)].node)].parent = mnode;
        tree.nodes[static_cast<std::size_t>(clusters[static_cast<std::size_t>(bj)].node)].parent = mnode;

        Cluster merged_cluster;
        merged_cluster.node = mnode;
        merged_cluster.rep = std::min(clusters[static_cast<std::size_t>(bi)].rep,
                                      clusters[static_cast<std::size_t>(bj)].rep);
        merged_cluster.size = clusters[static_cast<std::size_t>(bi)].size + clusters[static_cast<std::size_t>(bj)].size;
        clusters.push_back(merged_cluster);
        const int mid = static_cast<int>(clusters.size()) - 1;

        // Ward update for every other live cluster.
        const double sa = clusters[static_cast<std::size_t>(bi)].size;
        const double sb = clusters[static_cast<std::size_t>(bj)].size;
        for (int c : alive) {
            if (c == bi || c == bj) continue;
            const double sc = clusters[static_cast<std::size_t>(c)].size;
            const double dac = dist[static_cast<std::size_t>(bi)][static_cast<std::size_t>(c)];
            const double dbc = dist[static_cast<std::size_t>(bj)][static_cast<std::size_t>(c)];
            const double dab = dist[static_cast<std::size_t>(bi)][static_cast<std::size_t>(bj)];
            const double upd = ((sa + sc) * dac + (sb + sc) * dbc - sc * dab) / (sa + sb + sc);
            dist[static_cast<std::size_t>(mid)][static_cast<std::size_t>(c)] = upd;
            dist[static_cast<std::size_t>(c)][static_cast<std::size_t>(mid)] = upd;
        }

        std::vector<int> next;
        next.reserve(alive.size() - 1);
        for (int c : alive)
            if (c != bi && c != bj) next.push_back(c);
        next.push_back(mid);
        std::sort(next.begin(), next.end());
        alive = std::move(next);
    }

    tree.root = clusters[static_cast<std::size_t>(alive[0])].node;
    // Assign depths from the root.
    std::vector<int> stack{tree.root};
    tree.nodes[static_cast<std::size_t>(tree.root)].depth = 0;
    while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        for (int ch : tree.nodes[static_cast<std::size_t>(id)].children) {
            tree.nodes[static_cast<std::size_t>(ch)].depth = tree.nodes[static_cast<std::size_t>(id)].depth + 1;
            stack.push_back(ch);
        }
    }
    tree.padded = false;
    tree.validate();
    return tree;
}

// Extend every early-terminating path by self-duplicate nodes until all
// leaves sit at the maximum depth.
inline HierTree pad_tree(const HierTree& input) {
    HierTree tree = input;
    const int target = tree.leaf_level();
    const std::size_t original = tree.nodes.size();
    for (std::size_t i = 0; i < original; ++i) {
        if (!tree.nodes[i].children.empty()) continue;
        int cur = static_cast<int>(i);
        while (tree.nodes[static_cast<std::size_t>(cur)].depth < target) {
            HierTree::Node dup;
            dup.parent = cur;
            dup.class_id = tree.nodes[static_cast<std::size_t>(cur)].class_id;
            dup.depth = tree.nodes[static_cast<std::size_t>(cur)].depth + 1;
            tree.nodes[static_cast<std::size_t>(cur)].class_id = -1;
            tree.nodes.push_back(dup);
            const int nid = static_cast<int>(tree.nodes.size()) - 1;
            tree.nodes[static_cast<std::size_t>(cur)].children.push_back(nid);
            cur = nid;
        }
    }
    tree.padded = true;
    tree.validate();
    return tree;
}

inline SuperClassPartition partitions_at_level(const HierTree& tree, int level) {
    if (!tree.padded) throw argument_error("partitions_at_level: tree must be padded");
    if (level < 1 || level > tree.leaf_level())
        throw argument_error("partitions_at_level: level " + std::to_string(level) + " outside [1," +
                             std::to_string(tree.leaf_level()) + "]");
    SuperClassPartition part;
    part.level = level;
    for (std::size_t i = 0; i < tree.nodes.size(); ++i)
        if (tree.nodes[i].depth == level) part.groups.push_back(tree.leaf_classes(static_cast<int>(i)));
    std::sort(part.groups.begin(), part.groups.end(),
              [](const std::vector<int>& a, const std::vector<int>& b) { return a.front() < b.front(); });
    part.validate(tree.num_classes);
    return part;
}

// ---------------------------------------------------------------------------
// Layer -> hierarchy-level mapping. D counts depth levels including the root,
// so the finest (leaf) level is D-1.
// ---------------------------------------------------------------------------

enum class MappingStrategy { Balanced, Incremental, Decremental };

inline std::string to_string(MappingStrategy s) {
    switch (s) {
        case MappingStrategy::Balanced: return "balanced";
        case MappingStrategy::Incremental: return "incremental";
        case MappingStrategy::Decremental: return "decremental";
    }
    return "balanced";
}

inline MappingStrategy mapping_strategy_from(const std::string& s) {
    if (s == "balanced") return MappingStrategy::Balanced;
    if (s == "incremental") return MappingStrategy::Incremental;
    if (s == "decremental") return MappingStrategy::Decremental;
    throw data_error("unknown mapping strategy '" + s + "'");
}

// num_layers defaults to the 17-layer reference network; reduced networks use
// their own depth with the same proportional rule.
inline int layer_to_level(int layer, int depth_levels, MappingStrategy strategy, int num_layers = 17) {
    if (num_layers < 1) throw argument_error("layer_to_level: num_layers must be positive");
    if (layer < 0 || layer >= num_layers)
        throw argument_error("layer_to_level: layer " + std::to_string(layer) + " outside [0," +
                             std::to_string(num_layers - 1) + "]");
    if (depth_levels < 2) throw argument_error("layer_to_level: hierarchy needs at least 2 depth levels");
    const int leaf = depth_levels - 1;
    const int span = num_layers - 1;
    int level = 1;
    switch (strategy) {
        case MappingStrategy::Balanced:
            if (layer == 0 || span == 0) {
                level = layer == span ? leaf : 1;
            } else {
                level = static_cast<int>((static_cast<long long>(layer) * leaf + span - 1) / span);
            }
            break;
        case MappingStrategy::Incremental:
            level = std::min(1 + layer, leaf);
            break;
        case MappingStrategy::Decremental:
            level = std::max(leaf - (span - layer), 1);
            break;
    }
    return std::clamp(level, 1, leaf);
}

struct LevelMapping {
    MappingStrategy strategy = MappingStrategy::Balanced;
    std::vector<int> assignment;  // one level per layer

    static LevelMapping build(int num_layers, int depth_levels, MappingStrategy strategy) {
        LevelMapping m;
        m.strategy = strategy;
        m.assignment.reserve(static_cast<std::size_t>(num_layers));
        for (int i = 0; i < num_layers; ++i)
            m.assignment.push_back(layer_to_level(i, depth_levels, strategy, num_layers));
        m.validate(depth_levels);
        return m;
    }

    void validate(int depth_levels) const {
        const int leaf = depth_levels - 1;
        for (std::size_t i = 0; i < assignment.size(); ++i) {
            if (assignment[i] < 1 || assignment[i] > leaf)
                throw config_error("level mapping: layer " + std::to_string(i) + " assigned level " +
                                   std::to_string(assignment[i]) + " outside [1," + std::to_string(leaf) + "]");
            if (i > 0 && assignment[i] < assignment[i - 1])
                throw config_error("level mapping: levels must be non-decreasing across layers");
        }
        if (!assignment.empty() && assignment.back() != leaf)
            throw config_error("level mapping: final layer must sit at the leaf level (hierarchy too deep for " +
                               std::to_string(assignment.size()) + " layers with strategy incremental?)");
    }
};

// ---------------------------------------------------------------------------
// Text format, line oriented:
//   classes=K
//   depth=D
//   strategy=balanced|incremental|decremental
//   level <d>: {i,j,...} {k,...} ...
// '#' starts a comment; whitespace between tokens is ignored.
// ---------------------------------------------------------------------------

inline void save_hierarchy(const HierTree& tree, MappingStrategy strategy, std::ostream& os) {
    if (!tree.padded) throw argument_error("save_hierarchy: tree must be padded");
    tree.validate();
    os << "classes=" << tree.num_classes << "\n";
    os << "depth=" << tree.depth_levels() << "\n";
    os << "strategy=" << to_string(strategy) << "\n";
    for (int level = 1; level <= tree.leaf_level(); ++level) {
        const SuperClassPartition part = partitions_at_level(tree, level);
        os << "level " << level << ":";
        for (const auto& g : part.groups) {
            os << " {";
            for (std::size_t i = 0; i < g.size(); ++i) os << (i ? "," : "") << g[i];
            os << "}";
        }
        os << "\n";
    }
}

inline void save_hierarchy(const HierTree& tree, MappingStrategy strategy, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot open '" + path + "' for writing");
    save_hierarchy(tree, strategy, os);
    if (!os) throw io_error("write failed for '" + path + "'");
}

struct LoadedHierarchy {
    HierTree tree;
    MappingStrategy strategy = MappingStrategy::Balanced;

    LevelMapping mapping_for(int num_layers) const {
        return LevelMapping::build(num_layers, tree.depth_levels(), strategy);
    }
};

namespace detail {

[[noreturn]] inline void parse_fail(int line_no, const std::string& msg) {
    throw data_error("hierarchy file line " + std::to_string(line_no) + ": " + msg);
}

// Build a padded tree from validated per-level partitions (root implied).
inline HierTree tree_from_partitions(const std::vector<SuperClassPartition>& levels, int num_classes,
                                     const std::vector<int>& level_lines, int header_line) {
    HierTree tree;
    tree.num_classes = num_classes;
    HierTree::Node root;
    tree.nodes.push_back(root);
    tree.root = 0;

    // previous depth's nodes, keyed by sorted leaf set
    std::map<std::vector<int>, int> prev;
    {
        std::vector<int> all(static_cast<std::size_t>(num_classes));
        for (int c = 0; c < num_classes; ++c) all[static_cast<std::size_t>(c)] = c;
        prev[all] = 0;
    }
    for (std::size_t li = 0; li < levels.size(); ++li) {
        const int line_no = level_lines[li];
        std::map<std::vector<int>, int> cur;
        for (const auto& group : levels[li].groups) {
            // parent: the unique previous-level group that contains this one
            int parent = -1;
            for (const auto& [pset, pnode] : prev) {
                if (std::includes(pset.begin(), pset.end(), group.begin(), group.end())) {
                    parent = pnode;
                    break;
                }
            }
            if (parent < 0)
                parse_fail(line_no, "group is not nested inside any level-" + std::to_string(li) + " group");
            HierTree::Node node;
            node.parent = parent;
            node.depth = static_cast<int>(li) + 1;
            if (group.size() == 1 && li + 1 == levels.size()) node.class_id = group[0];
            tree.nodes.push_back(node);
            const int id = static_cast<int>(tree.nodes.size()) - 1;
            tree.nodes[static_cast<std::size_t>(parent)].children.push_back(id);
            cur[group] = id;
        }
        prev = std::move(cur);
    }
    if (levels.empty()) parse_fail(header_line, "no level lines found");
    tree.padded = true;
    tree.validate();
    return tree;
}

}  // namespace detail

inline LoadedHierarchy load_hierarchy(std::istream& is) {
    int num_classes = -1, depth = -1;
    MappingStrategy strategy = MappingStrategy::Balanced;
    bool have_strategy = false;
    std::vector<SuperClassPartition> levels;
    std::vector<int> level_lines;
    int expected_level = 1;

    std::string line;
    int line_no = 0;
    int header_line = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        // strip whitespace-only lines
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

        auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };

        const std::string text = strip(line);
        if (text.rfind("classes", 0) == 0 || text.rfind("depth", 0) == 0 || text.rfind("strategy", 0) == 0) {
            const auto eq = text.find('=');
            if (eq == std::string::npos) detail::parse_fail(line_no, "expected key=value");
            const std::string key = strip(text.substr(0, eq));
            const std::string val = strip(text.substr(eq + 1));
            try {
                if (key == "classes")
                    num_classes = std::stoi(val);
                else if (key == "depth")
                    depth = std::stoi(val);
                else if (key == "strategy") {
                    strategy = mapping_strategy_from(val);
                    have_strategy = true;
                } else
                    detail::parse_fail(line_no, "unknown header '" + key + "'");
            } catch (const data_error&) {
                throw;
            } catch (const std::exception&) {
                detail::parse_fail(line_no, "bad value '" + val + "' for '" + key + "'");
            }
            header_line = line_no;
            continue;
        }

        if (text.rfind("level", 0) == 0) {
            if (num_classes < 2) detail::parse_fail(line_no, "classes=K header must come before level lines");
            std::istringstream ls(text.substr(5));
            int level = -1;
            char colon = 0;
            if (!(ls >> level >> colon) || colon != ':')
                detail::parse_fail(line_no, "expected 'level <d>: {..} {..}'");
            if (level != expected_level)
                detail::parse_fail(line_no, "expected level " + std::to_string(expected_level) + ", found " +
                                                std::to_string(level));
            ++expected_level;

            SuperClassPartition part;
            part.level = level;
            std::string rest;
            std::getline(ls, rest);
            std::size_t pos = 0;
            while (true) {
                const auto open = rest.find('{', pos);
                if (open == std::string::npos) break;
                const auto close = rest.find('}', open);
                if (close == std::string::npos) detail::parse_fail(line_no, "unterminated group");
                std::vector<int> group;
                std::string tok;
                std::istringstream gs(rest.substr(open + 1, close - open - 1));
                while (std::getline(gs, tok, ',')) {
                    const std::string t = strip(tok);
                    if (t.empty()) detail::parse_fail(line_no, "empty class entry in group");
                    try {
                        group.push_back(std::stoi(t));
                    } catch (const std::exception&) {
                        detail::parse_fail(line_no, "bad class index '" + t + "'");
                    }
                }
                if (group.empty()) detail::parse_fail(line_no, "empty group");
                std::sort(group.begin(), group.end());
                part.groups.push_back(std::move(group));
                pos = close + 1;
            }
            try {
                part.validate(num_classes);
            } catch (const argument_error& e) {
                detail::parse_fail(line_no, e.what());
            }
            std::sort(part.groups.begin(), part.groups.end(),
                      [](const std::vector<int>& a, const std::vector<int>& b) { return a.front() < b.front(); });
            levels.push_back(std::move(part));
            level_lines.push_back(line_no);
            continue;
        }
        detail::parse_fail(line_no, "unrecognized line '" + text + "'");
    }

    if (num_classes < 2) throw data_error("hierarchy file: missing or invalid classes=K header");
    if (depth < 2) throw data_error("hierarchy file: missing or invalid depth=D header");
    if (!have_strategy) throw data_error("hierarchy file: missing strategy header");
    if (static_cast<int>(levels.size()) != depth - 1)
        throw data_error("hierarchy file: depth=" + std::to_string(depth) + " promises " + std::to_string(depth - 1) +
                         " level lines, found " + std::to_string(levels.size()));
    const auto& finest = levels.back();
    if (finest.num_groups() != static_cast<std::size_t>(num_classes))
        throw data_error("hierarchy file line " + std::to_string(level_lines.back()) +
                         ": finest level must list all " + std::to_string(num_classes) + " singleton classes");
    for (const auto& g : finest.groups)
        if (g.size() != 1)
            throw data_error("hierarchy file line " + std::to_string(level_lines.back()) +
                             ": finest level must contain only singletons");

    // group-count monotonicity across consecutive levels
    for (std::size_t i = 1; i < levels.size(); ++i)
        if (levels[i].num_groups() < levels[i - 1].num_groups())
            throw data_error("hierarchy file line " + std::to_string(level_lines[i]) +
                             ": group count decreases from previous level");

    LoadedHierarchy out;
    out.strategy = strategy;
    out.tree = detail::tree_from_partitions(levels, num_classes, level_lines, header_line);
    return out;
}

inline LoadedHierarchy load_hierarchy(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open hierarchy file '" + path + "'");
    return load_hierarchy(is);
}

}  // namespace hclff
