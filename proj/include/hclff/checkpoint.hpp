#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hclff/inference.hpp"
#include "hclff/layers.hpp"
#include "hclff/tensor.hpp"

namespace hclff {

// Versioned binary container: magic, little-endian section lengths, a JSON
// manifest describing tensor slots, then one raw payload blob. Loading
// validates lengths, offsets and every shape invariant before any state is
// handed back.
inline constexpr char kCheckpointMagic[4] = {'H', 'C', 'F', 'F'};
inline constexpr uint32_t kCheckpointVersion = 1;

template <class R>
struct Checkpoint {
    NetworkSpec spec;
    Network<R> net;
    std::string hierarchy_text;
    int epoch = 0;  // next epoch to run when resuming
    uint64_t seed = 0;
    bool has_sip = false;
    SipInterval sip;
    std::string config_text;
};

namespace detail {

template <class R>
struct PayloadWriter {
    std::vector<char> bytes;

    nlohmann::json add(const Tensor<R>& t) {
        nlohmann::json j;
        j["offset"] = bytes.size();
        j["shape"] = t.shape;
        const std::size_t len = t.numel() * sizeof(R);
        const std::size_t at = bytes.size();
        bytes.resize(at + len);
        if (len > 0) std::memcpy(bytes.data() + at, t.data.data(), len);
        return j;
    }
};

template <class R>
struct PayloadReader {
    const std::vector<char>& bytes;

    Tensor<R> get(const nlohmann::json& j, const char* what) const {
        if (!j.contains("offset") || !j.contains("shape"))
            throw data_error(std::string("checkpoint: missing tensor entry for ") + what);
        const std::size_t offset = j.at("offset").get<std::size_t>();
        const std::vector<std::size_t> shape = j.at("shape").get<std::vector<std::size_t>>();
        Tensor<R> t(shape);
        const std::size_t len = t.numel() * sizeof(R);
        if (offset + len > bytes.size())
            throw data_error(std::string("checkpoint: tensor ") + what + " overruns payload (offset " +
                             std::to_string(offset) + ", length " + std::to_string(len) + ", payload " +
                             std::to_string(bytes.size()) + ")");
        if (len > 0) std::memcpy(t.data.data(), bytes.data() + offset, len);
        return t;
    }
};

template <class R>
nlohmann::json adam_to_json(const AdamState<R>& a, PayloadWriter<R>& payload) {
    nlohmann::json j;
    j["m"] = payload.add(a.first_moment);
    j["v"] = payload.add(a.second_moment);
    j["step"] = a.step_count;
    j["beta1"] = a.beta1;
    j["beta2"] = a.beta2;
    j["eps"] = a.eps_adam;
    j["weight_decay"] = a.weight_decay;
    j["decoupled"] = a.decoupled_decay;
    return j;
}

template <class R>
AdamState<R> adam_from_json(const nlohmann::json& j, const PayloadReader<R>& payload, const char* what) {
    AdamState<R> a;
    a.first_moment = payload.get(j.at("m"), what);
    a.second_moment = payload.get(j.at("v"), what);
    a.step_count = j.at("step").get<std::int64_t>();
    a.beta1 = j.at("beta1").get<double>();
    a.beta2 = j.at("beta2").get<double>();
    a.eps_adam = j.at("eps").get<double>();
    a.weight_decay = j.at("weight_decay").get<double>();
    a.decoupled_decay = j.at("decoupled").get<bool>();
    return a;
}

inline nlohmann::json spec_to_json(const NetworkSpec& s) {
    nlohmann::json j;
    j["block_widths"] = s.block_widths;
    j["layers_per_block"] = s.layers_per_block;
    j["num_classes"] = s.num_classes;
    j["goodness_mode"] = to_string(s.goodness_mode);
    j["in_channels"] = s.in_channels;
    j["embed_dim"] = s.embed_dim;
    j["kernel"] = s.kernel;
    j["total_layers"] = s.total_layers;
    return j;
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
    NetworkSpec s;
    s.block_widths = j.at("block_widths").get<std::vector<int>>();
    s.layers_per_block = j.at("layers_per_block").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    s.goodness_mode = goodness_mode_from(j.at("goodness_mode").get<std::string>());
    s.in_channels = j.at("in_channels").get<int>();
    s.embed_dim = j.at("embed_dim").get<int>();
    s.kernel = j.at("kernel").get<int>();
    s.total_layers = j.at("total_layers").get<int>();
    s.validate();
    return s;
}

inline void write_u32(std::ostream& os, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

inline void write_u64(std::ostream& os, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

inline uint32_t read_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw data_error(std::string("checkpoint: truncated while reading ") + what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

inline uint64_t read_u64(std::istream& is, const char* what) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw data_error(std::string("checkpoint: truncated while reading ") + what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace detail

template <class R>
void save_checkpoint(const Checkpoint<R>& ckpt, const std::string& path) {
    detail::PayloadWriter<R> payload;
    nlohmann::json m;
    m["dtype"] = sizeof(R) == 4 ? "f32" : "f64";
    m["spec"] = detail::spec_to_json(ckpt.spec);
    m["epoch"] = ckpt.epoch;
    m["seed"] = ckpt.seed;
    m["hierarchy"] = ckpt.hierarchy_text;
    m["config"] = ckpt.config_text;
    if (ckpt.has_sip) {
        m["sip"] = {{"s", ckpt.sip.s}, {"e", ckpt.sip.e}, {"val_accuracy", ckpt.sip.val_accuracy}};
    }
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : ckpt.net.layers) {
        nlohmann::json lj;
        lj["index"] = layer.layer_index;
        lj["level"] = layer.hierarchy_level;
        lj["stride"] = layer.stride;
        lj["weights"] = payload.add(layer.weights);
        lj["bias"] = payload.add(layer.bias);
        lj["proj_w"] = payload.add(layer.proj_w);
        lj["proj_b"] = payload.add(layer.proj_b);
        lj["weights_adam"] = detail::adam_to_json(layer.weights_adam, payload);
        lj["bias_adam"] = detail::adam_to_json(layer.bias_adam, payload);
        lj["proj_w_adam"] = detail::adam_to_json(layer.proj_w_adam, payload);
        lj["proj_b_adam"] = detail::adam_to_json(layer.proj_b_adam, payload);
        layers.push_back(std::move(lj));
    }
    m["layers"] = std::move(layers);

    const std::string manifest = m.dump();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open '" + path + "' for writing");
    os.write(kCheckpointMagic, 4);
    detail::write_u32(os, kCheckpointVersion);
    detail::write_u32(os, static_cast<uint32_t>(sizeof(R)));
    detail::write_u64(os, manifest.size());
    os.write(manifest.data(), static_cast<long>(manifest.size()));
    detail::write_u64(os, payload.bytes.size());
    os.write(payload.bytes.data(), static_cast<long>(payload.bytes.size()));
    if (!os) throw io_error("write failed for '" + path + "'");
}

template <class R>
Checkpoint<R> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open checkpoint '" + path + "'");
    is.seekg(0, std::ios::end);
    const uint64_t file_size = static_cast<uint64_t>(is.tellg());
    is.seekg(0, std::ios::beg);

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw data_error("'" + path + "': not a checkpoint (bad magic)");
    const uint32_t version = detail::read_u32(is, "version");
    if (version != kCheckpointVersion)
        throw data_error("'" + path + "': unsupported checkpoint version " + std::to_string(version));
    const uint32_t dtype = detail::read_u32(is, "dtype");
    if (dtype != sizeof(R))
        throw data_error("'" + path + "': element width " + std::to_string(dtype) + " does not match this build (" +
                         std::to_string(sizeof(R)) + ")");
    const uint64_t manifest_len = detail::read_u64(is, "manifest length");
    if (28 + manifest_len > file_size)
        throw data_error("'" + path + "': manifest length " + std::to_string(manifest_len) + " overruns file size " +
                         std::to_string(file_size));
    std::string manifest(manifest_len, '\0');
    is.read(manifest.data(), static_cast<long>(manifest_len));
    const uint64_t payload_len = detail::read_u64(is, "payload length");
    if (28 + manifest_len + payload_len != file_size)
        throw data_error("'" + path + "': payload length " + std::to_string(payload_len) +
                         " inconsistent with file size " + std::to_string(file_size));
    std::vector<char> payload_bytes(payload_len);
    if (payload_len > 0) is.read(payload_bytes.data(), static_cast<long>(payload_len));
    if (!is) throw data_error("'" + path + "': truncated payload");

    nlohmann::json m;
    try {
        m = nlohmann::json::parse(manifest);
    } catch (const std::exception& e) {
        throw data_error("'" + path + "': manifest parse error: " + e.what());
    }

    Checkpoint<R> ckpt;
    detail::PayloadReader<R> payload{payload_bytes};
    try {
        ckpt.spec = detail::spec_from_json(m.at("spec"));
        ckpt.epoch = m.at("epoch").get<int>();
        ckpt.seed = m.at("seed").get<uint64_t>();
        ckpt.hierarchy_text = m.at("hierarchy").get<std::string>();
        ckpt.config_text = m.at("config").get<std::string>();
        if (m.contains("sip")) {
            ckpt.has_sip = true;
            ckpt.sip.s = m["sip"].at("s").get<int>();
            ckpt.sip.e = m["sip"].at("e").get<int>();
            ckpt.sip.val_accuracy = m["sip"].at("val_accuracy").get<double>();
        }
        ckpt.net.spec = ckpt.spec;
        for (const auto& lj : m.at("layers")) {
            LayerState<R> layer;
            layer.layer_index = lj.at("index").get<int>();
            layer.hierarchy_level = lj.at("level").get<int>();
            layer.stride = lj.at("stride").get<int>();
            layer.num_classes = ckpt.spec.num_classes;
            layer.weights = payload.get(lj.at("weights"), "weights");
            layer.bias = payload.get(lj.at("bias"), "bias");
            layer.proj_w = payload.get(lj.at("proj_w"), "proj_w");
            layer.proj_b = payload.get(lj.at("proj_b"), "proj_b");
            layer.weights_adam = detail::adam_from_json(lj.at("weights_adam"), payload, "weights_adam");
            layer.bias_adam = detail::adam_from_json(lj.at("bias_adam"), payload, "bias_adam");
            layer.proj_w_adam = detail::adam_from_json(lj.at("proj_w_adam"), payload, "proj_w_adam");
            layer.proj_b_adam = detail::adam_from_json(lj.at("proj_b_adam"), payload, "proj_b_adam");
            layer.validate();
            layer.weights_adam.validate(layer.weights);
            layer.bias_adam.validate(layer.bias);
            layer.proj_w_adam.validate(layer.proj_w);
            layer.proj_b_adam.validate(layer.proj_b);
            ckpt.net.layers.push_back(std::move(layer));
        }
    } catch (const data_error&) {
        throw;
    } catch (const argument_error& e) {
        throw data_error("'" + path + "': invalid checkpoint state: " + e.what());
    } catch (const std::exception& e) {
        throw data_error("'" + path + "': malformed manifest: " + e.what());
    }
    if (static_cast<int>(ckpt.net.layers.size()) != ckpt.spec.layer_count())
        throw data_error("'" + path + "': layer count mismatch");
    return ckpt;
}

}  // namespace hclff
