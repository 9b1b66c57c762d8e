#pragma once

#include <string>
#include <vector>

#include "ascfuse/error.hpp"

namespace ascfuse::nnet {

enum class LayerKind { conv, maxpool, flatten, full };
enum class Activation { none, relu };

struct LayerSpec {
    LayerKind kind = LayerKind::conv;
    std::string name;
    int kernel_h = 1;
    int kernel_w = 1;
    int stride = 1;
    int pad = 0;
    int channels = 0;  // output channels (conv) / output width (full); pools keep their input count
    Activation activation = Activation::none;
    bool batch_norm = false;
    double dropout = 0.0;
};

struct NetworkConfig {
    std::string preset = "custom";
    std::vector<LayerSpec> layers;
    int input_channels = 1;
    int input_h = 143;
    int input_w = 143;
    int num_classes = 0;       // C
    int num_superclasses = 0;  // N; 0 = no super-class head
    double bn_eps = 1e-5;
    double bn_momentum = 0.9;  // running = momentum·running + (1-momentum)·batch
};

struct Shape {
    int c = 0, h = 0, w = 0;
    std::size_t size() const { return static_cast<std::size_t>(c) * h * w; }
    friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::flatten: return "flatten";
        case LayerKind::full: return "full";
    }
    return "?";
}

inline LayerKind parse_layer_kind(const std::string& s) {
    if (s == "conv") return LayerKind::conv;
    if (s == "maxpool") return LayerKind::maxpool;
    if (s == "flatten") return LayerKind::flatten;
    if (s == "full") return LayerKind::full;
    throw ConfigError("unknown layer kind '" + s + "'");
}

namespace detail {

inline LayerSpec conv(std::string name, int k, int stride, int pad, int ch, double dropout = 0.0) {
    return {LayerKind::conv, std::move(name), k, k, stride, pad, ch, Activation::relu, true, dropout};
}
inline LayerSpec pool(std::string name, double dropout) {
    return {LayerKind::maxpool, std::move(name), 2, 2, 2, 0, 0, Activation::none, false, dropout};
}

inline NetworkConfig vgg_like(int num_classes, int input, int width_div, const char* preset) {
    if (num_classes < 2) throw ConfigError("network needs at least 2 classes");
    auto w = [&](int c) { return c / width_div; };
    NetworkConfig cfg;
    cfg.preset = preset;
    cfg.input_h = cfg.input_w = input;
    cfg.num_classes = num_classes;
    cfg.layers = {
        conv("conv1", 5, 2, 2, w(32)),
        conv("conv2", 3, 1, 1, w(32)),
        pool("pool1", 0.3),
        conv("conv3", 3, 1, 1, w(64)),
        conv("conv4", 3, 1, 1, w(64)),
        pool("pool2", 0.3),
        conv("conv5", 3, 1, 1, w(128)),
        conv("conv6", 3, 1, 1, w(128)),
        conv("conv7", 3, 1, 1, w(128)),
        conv("conv8", 3, 1, 1, w(128)),
        pool("pool3", 0.3),
        conv("conv9", 3, 1, 0, w(512), 0.5),
        conv("conv10", 1, 1, 0, w(512), 0.5),
        conv("conv11", 1, 1, 0, num_classes),
        {LayerKind::flatten, "flatten", 1, 1, 1, 0, 0, Activation::none, false, 0.0},
        {LayerKind::full, "full1", 1, 1, 1, 0, num_classes, Activation::none, false, 0.0},
    };
    return cfg;
}

}  // namespace detail

/// The 143×143 VGG-like network with M = num_classes.
inline NetworkConfig table1_config(int num_classes, int input = 143) {
    return detail::vgg_like(num_classes, input, 1, "table1");
}

/// Same topology with a quarter of the channels on 64×64 input.
inline NetworkConfig vgg_mini_config(int num_classes, int input = 64) {
    return detail::vgg_like(num_classes, input, 4, "vgg-mini");
}

inline NetworkConfig preset_config(const std::string& preset, int num_classes, int input = 0) {
    if (preset == "table1") return table1_config(num_classes, input > 0 ? input : 143);
    if (preset == "vgg-mini") return vgg_mini_config(num_classes, input > 0 ? input : 64);
    throw ConfigError("unknown network preset '" + preset + "' (expected table1 or vgg-mini)");
}

/// Output shape of every layer, preceded by the input shape. Throws naming
/// the first layer whose input is smaller than its kernel.
inline std::vector<Shape> shape_plan(const NetworkConfig& cfg) {
    if (cfg.input_channels < 1 || cfg.input_h < 1 || cfg.input_w < 1) throw ConfigError("input shape must be positive");
    if (cfg.layers.empty() || cfg.layers.back().kind != LayerKind::full)
        throw ConfigError("network must end with a full (output) layer");
    if (cfg.layers.back().channels != cfg.num_classes)
        throw ConfigError("last full layer width must equal num_classes");
    if (cfg.num_superclasses < 0) throw ConfigError("num_superclasses must be >= 0");

    std::vector<Shape> trace{{cfg.input_channels, cfg.input_h, cfg.input_w}};
    bool flat = false;
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
        const LayerSpec& l = cfg.layers[i];
        const Shape in = trace.back();
        const std::string where = "layer '" + l.name + "' (#" + std::to_string(i) + ")";
        if (l.stride < 1) throw ConfigError(where + ": stride must be >= 1");
        if (l.pad < 0) throw ConfigError(where + ": pad must be >= 0");
        if (l.dropout < 0.0 || l.dropout >= 1.0) throw ConfigError(where + ": dropout must be in [0, 1)");
        if (l.kind == LayerKind::full && i + 1 != cfg.layers.size())
            throw ConfigError(where + ": only the last layer may be full");
        if (flat && l.kind != LayerKind::full) throw ConfigError(where + ": spatial layer after flatten");
        switch (l.kind) {
            case LayerKind::conv:
            case LayerKind::maxpool: {
                if (l.kind == LayerKind::conv && l.channels < 1) throw ConfigError(where + ": channels must be >= 1");
                const int ph = in.h + 2 * l.pad, pw = in.w + 2 * l.pad;
                if (ph < l.kernel_h || pw < l.kernel_w)
                    throw ConfigError(where + ": spatial collapse, input " + std::to_string(in.h) + "x" +
                                      std::to_string(in.w) + " (padded " + std::to_string(ph) + "x" +
                                      std::to_string(pw) + ") is smaller than kernel " + std::to_string(l.kernel_h) +
                                      "x" + std::to_string(l.kernel_w));
                trace.push_back({l.kind == LayerKind::conv ? l.channels : in.c, (ph - l.kernel_h) / l.stride + 1,
                                 (pw - l.kernel_w) / l.stride + 1});
                break;
            }
            case LayerKind::flatten:
                flat = true;
                trace.push_back({static_cast<int>(in.size()), 1, 1});
                break;
            case LayerKind::full:
                if (l.channels < 1) throw ConfigError(where + ": width must be >= 1");
                trace.push_back({l.channels, 1, 1});
                break;
        }
    }
    return trace;
}

/// L: size of the layer feeding the output layer.
inline std::size_t feature_length(const NetworkConfig& cfg) {
    const auto trace = shape_plan(cfg);
    return trace[trace.size() - 2].size();
}

}  // namespace ascfuse::nnet
