#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hclff/augment.hpp"
#include "hclff/common.hpp"
#include "hclff/layers.hpp"
#include "hclff/optim.hpp"

namespace hclff {

// Everything a training run needs. Parsed from line-oriented `key = value`
// text; `[section]` headers are allowed and ignored, '#' starts a comment.
struct TrainConfig {
    // dataset
    std::string dataset = "synth";  // mnist | cifar10 | synth
    std::string data_dir = "data";
    int train_limit = 0;  // cap on training images, 0 = all
    double val_fraction = 0.1;
    int synth_classes = 8, synth_levels = 3, synth_per_class = 100, synth_image_size = 16;
    double synth_noise = 0.08;

    // network
    std::vector<int> widths{40, 80, 160, 320};
    int total_layers = 0;  // 0 = stem + 4 per block
    std::string goodness_mode = "mean";
    int embed_dim = 128;

    // objective
    double lambda = 1.0;
    std::string supcon_reduction = "sum";

    // optimization
    int epochs = 150;
    int batch_size = 128;
    double lr_init = 8e-2, lr_min = 2e-4;
    double tau_start = 0.8, tau_warm = 0.2, tau_end = 0.08;
    int warmup_epochs = 100;
    double weight_decay = 1e-4;
    bool decoupled_decay = true;

    // augmentation
    std::string augment = "none";  // none | grayscale | natural

    // hierarchy: "data-driven" (two-stage), "singleton", or a file path
    std::string hierarchy = "data-driven";
    std::string mapping = "balanced";
    int stage1_epochs = 0;  // 0 = same as epochs
    bool stage1_contrastive = true;

    // probe
    int probe_epochs = 100;
    double probe_lr = 1e-3;

    // execution
    std::string mode = "sequential";  // sequential | pipeline
    int queue_capacity = 4;
    uint64_t seed = 1;
    int threads = 0;  // 0 = hardware
    int val_every = 1;  // validation metrics every N epochs, 0 = only at end
    std::string out_dir = "runs";

    std::string raw_text;  // original file contents, embedded in checkpoints

    NetworkSpec network_spec(int num_classes, int in_channels) const {
        NetworkSpec spec;
        spec.block_widths = widths;
        spec.num_classes = num_classes;
        spec.goodness_mode = goodness_mode_from(goodness_mode);
        spec.in_channels = in_channels;
        spec.embed_dim = embed_dim;
        spec.total_layers = total_layers;
        spec.validate();
        return spec;
    }

    ScheduleConfig schedule(int total_epochs) const {
        ScheduleConfig s;
        s.lr_init = lr_init;
        s.lr_min = lr_min;
        s.total_epochs = total_epochs;
        s.tau_start = tau_start;
        s.tau_warm = tau_warm;
        s.tau_end = tau_end;
        s.warmup_epochs = std::min(warmup_epochs, total_epochs);
        s.validate();
        return s;
    }

    AugmentConfig augment_config() const {
        AugmentConfig a;
        a.family = augment_family_from(augment);
        a.validate();
        return a;
    }

    void validate() const {
        if (dataset != "mnist" && dataset != "cifar10" && dataset != "synth")
            throw config_error("config: unknown dataset '" + dataset + "'");
        if (epochs < 1) throw config_error("config: epochs must be positive");
        if (batch_size < 1) throw config_error("config: batch_size must be positive");
        if (queue_capacity < 1) throw config_error("config: queue_capacity must be >= 1");
        if (mode != "sequential" && mode != "pipeline")
            throw config_error("config: unknown mode '" + mode + "'");
        if (lambda < 0) throw config_error("config: lambda must be non-negative");
        if (val_fraction < 0 || val_fraction >= 1) throw config_error("config: val_fraction outside [0,1)");
        if (supcon_reduction != "sum" && supcon_reduction != "mean_over_valid_anchors")
            throw config_error("config: unknown supcon_reduction '" + supcon_reduction + "'");
        goodness_mode_from(goodness_mode);
        augment_family_from(augment);
        mapping_strategy_from(mapping);
    }
};

namespace detail {

inline std::string strip(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw config_error("config: bad boolean '" + v + "' for " + key);
}

inline std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
    std::vector<int> out;
    std::istringstream is(v);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        const std::string t = strip(tok);
        if (t.empty()) continue;
        try {
            out.push_back(std::stoi(t));
        } catch (const std::exception&) {
            throw config_error("config: bad integer '" + t + "' in " + key);
        }
    }
    if (out.empty()) throw config_error("config: empty list for " + key);
    return out;
}

}  // namespace detail

inline TrainConfig parse_config(std::istream& is, const std::string& origin = "<config>") {
    TrainConfig cfg;
    std::ostringstream raw;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        raw << line << "\n";
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string text = detail::strip(line);
        if (text.empty()) continue;
        if (text.front() == '[' && text.back() == ']') continue;  // section header
        const auto eq = text.find('=');
        if (eq == std::string::npos)
            throw config_error(origin + " line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::strip(text.substr(0, eq));
        const std::string val = detail::strip(text.substr(eq + 1));
        try {
            if (key == "dataset") cfg.dataset = val;
            else if (key == "data_dir") cfg.data_dir = val;
            else if (key == "train_limit") cfg.train_limit = std::stoi(val);
            else if (key == "val_fraction") cfg.val_fraction = std::stod(val);
            else if (key == "synth_classes") cfg.synth_classes = std::stoi(val);
            else if (key == "synth_levels") cfg.synth_levels = std::stoi(val);
            else if (key == "synth_per_class") cfg.synth_per_class = std::stoi(val);
            else if (key == "synth_image_size") cfg.synth_image_size = std::stoi(val);
            else if (key == "synth_noise") cfg.synth_noise = std::stod(val);
            else if (key == "widths") cfg.widths = detail::parse_int_list(val, key);
            else if (key == "total_layers") cfg.total_layers = std::stoi(val);
            else if (key == "goodness_mode") cfg.goodness_mode = val;
            else if (key == "embed_dim") cfg.embed_dim = std::stoi(val);
            else if (key == "lambda") cfg.lambda = std::stod(val);
            else if (key == "supcon_reduction") cfg.supcon_reduction = val;
            else if (key == "epochs") cfg.epochs = std::stoi(val);
            else if (key == "batch_size") cfg.batch_size = std::stoi(val);
            else if (key == "lr_init") cfg.lr_init = std::stod(val);
            else if (key == "lr_min") cfg.lr_min = std::stod(val);
            else if (key == "tau_start") cfg.tau_start = std::stod(val);
            else if (key == "tau_warm") cfg.tau_warm = std::stod(val);
            else if (key == "tau_end") cfg.tau_end = std::stod(val);
            else if (key == "warmup_epochs") cfg.warmup_epochs = std::stoi(val);
            else if (key == "weight_decay") cfg.weight_decay = std::stod(val);
            else if (key == "decoupled_decay") cfg.decoupled_decay = detail::parse_bool(val, key);
            else if (key == "augment") cfg.augment = val;
            else if (key == "hierarchy") cfg.hierarchy = val;
            else if (key == "mapping") cfg.mapping = val;
            else if (key == "stage1_epochs") cfg.stage1_epochs = std::stoi(val);
            else if (key == "stage1_contrastive") cfg.stage1_contrastive = detail::parse_bool(val, key);
            else if (key == "probe_epochs") cfg.probe_epochs = std::stoi(val);
            else if (key == "probe_lr") cfg.probe_lr = std::stod(val);
            else if (key == "mode") cfg.mode = val;
            else if (key == "queue_capacity") cfg.queue_capacity = std::stoi(val);
            else if (key == "seed") cfg.seed = static_cast<uint64_t>(std::stoull(val));
            else if (key == "threads") cfg.threads = std::stoi(val);
            else if (key == "val_every") cfg.val_every = std::stoi(val);
            else if (key == "out_dir") cfg.out_dir = val;
            else
                throw config_error(origin + " line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        } catch (const config_error&) {
            throw;
        } catch (const std::exception&) {
            throw config_error(origin + " line " + std::to_string(line_no) + ": bad value '" + val + "' for '" +
                               key + "'");
        }
    }
    cfg.raw_text = raw.str();
    cfg.validate();
    return cfg;
}

inline TrainConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw config_error("cannot open config file '" + path + "'");
    return parse_config(is, path);
}

inline TrainConfig parse_config_text(const std::string& text) {
    std::istringstream is(text);
    return parse_config(is, "<embedded config>");
}

}  // namespace hclff
