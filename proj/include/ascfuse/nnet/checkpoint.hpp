#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ascfuse/error.hpp"
#include "ascfuse/nnet/config.hpp"
#include "ascfuse/nnet/network.hpp"
#include "ascfuse/numerics/tensor_io.hpp"

namespace ascfuse::nnet {

using nlohmann::json;

inline json to_json(const NetworkConfig& cfg) {
    json layers = json::array();
    for (const auto& l : cfg.layers)
        layers.push_back({{"kind", to_string(l.kind)},
                          {"name", l.name},
                          {"kernel", {l.kernel_h, l.kernel_w}},
                          {"stride", l.stride},
                          {"pad", l.pad},
                          {"channels", l.channels},
                          {"activation", l.activation == Activation::relu ? "relu" : "none"},
                          {"batch_norm", l.batch_norm},
                          {"dropout", l.dropout}});
    return {{"preset", cfg.preset},
            {"input", {cfg.input_channels, cfg.input_h, cfg.input_w}},
            {"num_classes", cfg.num_classes},
            {"num_superclasses", cfg.num_superclasses},
            {"bn_eps", cfg.bn_eps},
            {"bn_momentum", cfg.bn_momentum},
            {"layers", layers}};
}

inline NetworkConfig network_config_from_json(const json& j) {
    try {
        NetworkConfig cfg;
        cfg.preset = j.at("preset").get<std::string>();
        cfg.input_channels = j.at("input").at(0).get<int>();
        cfg.input_h = j.at("input").at(1).get<int>();
        cfg.input_w = j.at("input").at(2).get<int>();
        cfg.num_classes = j.at("num_classes").get<int>();
        cfg.num_superclasses = j.at("num_superclasses").get<int>();
        cfg.bn_eps = j.at("bn_eps").get<double>();
        cfg.bn_momentum = j.at("bn_momentum").get<double>();
        for (const auto& lj : j.at("layers")) {
            LayerSpec l;
            l.kind = parse_layer_kind(lj.at("kind").get<std::string>());
            l.name = lj.at("name").get<std::string>();
            l.kernel_h = lj.at("kernel").at(0).get<int>();
            l.kernel_w = lj.at("kernel").at(1).get<int>();
            l.stride = lj.at("stride").get<int>();
            l.pad = lj.at("pad").get<int>();
            l.channels = lj.at("channels").get<int>();
            const auto act = lj.at("activation").get<std::string>();
            if (act != "relu" && act != "none") throw ConfigError("unknown activation '" + act + "'");
            l.activation = act == "relu" ? Activation::relu : Activation::none;
            l.batch_norm = lj.at("batch_norm").get<bool>();
            l.dropout = lj.at("dropout").get<double>();
            cfg.layers.push_back(std::move(l));
        }
        return cfg;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("network config: ") + e.what());
    }
}

struct CheckpointInfo {
    int epoch = 0;
    std::uint64_t seed = 0;
    json extra = json::object();
};

namespace detail {

inline std::filesystem::path ckpt_json(const std::filesystem::path& base) {
    return base.string() + ".ckpt.json";
}
inline std::filesystem::path ckpt_weights(const std::filesystem::path& base) {
    return base.string() + ".weights.atns";
}

}  // namespace detail

/// Writes `<base>.ckpt.json` and `<base>.weights.atns` (one f32 vector of all
/// parameters followed by BN running statistics).
template <class T>
void save_checkpoint(const std::filesystem::path& base, const Network<T>& net, const CheckpointInfo& info = {}) {
    json entries = json::array();
    Tensor blob;
    blob.dtype = DType::f32;
    std::size_t offset = 0;
    auto add = [&](const std::string& name, const std::vector<T>& v) {
        entries.push_back({{"name", name}, {"offset", offset}, {"size", v.size()}});
        blob.values.insert(blob.values.end(), v.begin(), v.end());
        offset += v.size();
    };
    for (const auto& p : net.params()) add(p.name, p.value);
    for (const auto& l : net.layers())
        if (l.spec.batch_norm) {
            add(l.spec.name + ".running_mean", l.running_mean);
            add(l.spec.name + ".running_var", l.running_var);
        }
    blob.dims = {static_cast<std::uint32_t>(offset)};
    json j = {{"format", "ascfuse-checkpoint"},
              {"version", 1},
              {"network", to_json(net.config())},
              {"epoch", info.epoch},
              {"seed", info.seed},
              {"weights_file", detail::ckpt_weights(base).filename().string()},
              {"tensors", entries},
              {"extra", info.extra}};
    if (base.has_parent_path()) std::filesystem::create_directories(base.parent_path());
    tensor_write(detail::ckpt_weights(base), blob);
    std::ofstream f(detail::ckpt_json(base), std::ios::binary);
    if (!f) throw Error("cannot write checkpoint " + detail::ckpt_json(base).string());
    f << j.dump(2) << '\n';
}

template <class T>
Network<T> load_checkpoint(const std::filesystem::path& base, CheckpointInfo* info = nullptr) {
    std::ifstream f(detail::ckpt_json(base), std::ios::binary);
    if (!f) throw Error("cannot read checkpoint " + detail::ckpt_json(base).string());
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError("checkpoint " + detail::ckpt_json(base).string() + ": " + e.what());
    }
    const NetworkConfig cfg = network_config_from_json(j.at("network"));
    Rng dummy(0);
    Network<T> net = Network<T>::build(cfg, dummy);
    const Tensor blob = tensor_read(detail::ckpt_weights(base));
    if (blob.dims.size() != 1) throw ShapeError("checkpoint weights must be a rank-1 tensor");

    std::vector<std::pair<std::string, std::vector<T>*>> slots;
    for (auto& p : net.params()) slots.emplace_back(p.name, &p.value);
    for (auto& l : net.layers())
        if (l.spec.batch_norm) {
            slots.emplace_back(l.spec.name + ".running_mean", &l.running_mean);
            slots.emplace_back(l.spec.name + ".running_var", &l.running_var);
        }
    const auto& entries = j.at("tensors");
    if (entries.size() != slots.size())
        throw ShapeError("checkpoint has " + std::to_string(entries.size()) + " tensors, network expects " +
                         std::to_string(slots.size()));
    for (std::size_t k = 0; k < slots.size(); ++k) {
        const auto& e = entries[k];
        const auto name = e.at("name").get<std::string>();
        const auto off = e.at("offset").get<std::size_t>();
        const auto size = e.at("size").get<std::size_t>();
        auto& [want_name, dst] = slots[k];
        if (name != want_name || size != dst->size())
            throw ShapeError("checkpoint tensor '" + name + "' (" + std::to_string(size) + ") does not match '" +
                             want_name + "' (" + std::to_string(dst->size()) + ")");
        if (off + size > blob.values.size()) throw ShapeError("checkpoint tensor '" + name + "' exceeds weight blob");
        for (std::size_t i = 0; i < size; ++i) (*dst)[i] = static_cast<T>(blob.values[off + i]);
    }
    if (info) {
        info->epoch = j.value("epoch", 0);
        info->seed = j.value("seed", std::uint64_t{0});
        info->extra = j.value("extra", json::object());
    }
    return net;
}

}  // namespace ascfuse::nnet
