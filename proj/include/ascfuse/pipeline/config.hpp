#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ascfuse/dsp/patches.hpp"
#include "ascfuse/dsp/spectrogram.hpp"
#include "ascfuse/error.hpp"
#include "ascfuse/fusion/features.hpp"
#include "ascfuse/labelexp/expand.hpp"
#include "ascfuse/nnet/config.hpp"
#include "ascfuse/nnet/train.hpp"
#include "ascfuse/pipeline/files.hpp"
#include "ascfuse/pipeline/synth.hpp"

namespace ascfuse::pipeline {

using dsp::SpecKind;

struct PatchGeometry {
    std::size_t width = 143;
    std::size_t shift = 126;
    std::size_t expected = 0;  // expected patches per segment; 0: unchecked
};

inline PatchGeometry default_geometry(SpecKind k) {
    switch (k) {
        case SpecKind::stft: return {143, 126, 0};
        case SpecKind::cqt: return {143, 80, 0};
        case SpecKind::mfcc: return {143, 100, 0};
    }
    return {};
}

struct LabelExpansionConfig {
    bool enabled = true;
    int num_superclasses = 0;  // 0: eigengap
    labelexp::LeSettings settings;
    nnet::TrainConfig train;  // fine-tuning schedule
};

struct FusionConfig {
    std::vector<fusion::KindPair> pairs;
    double pca_threshold = 0.99;
    double svm_c = 1.0;
};

struct Seeds {
    std::uint64_t data = 0;
    std::uint64_t init = 0;
    std::uint64_t shuffle = 0;
    std::uint64_t permutation = 0;
};

struct SplitConfig {
    int test_fold = 0;
    double validation_fraction = 0.2;
    int num_folds = 4;  // used when the manifest carries no folds
};

struct ExperimentConfig {
    std::string name = "experiment";
    fs::path output_dir;
    std::optional<fs::path> manifest;
    std::optional<SynthSpec> synth;
    double sample_rate = 22050.0;  // audio at other rates is resampled
    std::vector<SpecKind> kinds{SpecKind::stft, SpecKind::cqt};
    dsp::StftConfig stft;
    dsp::CqtConfig cqt;
    dsp::MfccConfig mfcc;
    std::map<SpecKind, PatchGeometry> patches;
    std::size_t patch_size = 0;  // 0: the preset's input size
    std::string preset = "vgg-mini";
    nnet::TrainConfig train;
    LabelExpansionConfig le;
    FusionConfig fusion;
    Seeds seeds;
    SplitConfig split;
    bool svg = true;

    PatchGeometry geometry(SpecKind k) const {
        auto it = patches.find(k);
        return it == patches.end() ? default_geometry(k) : it->second;
    }
    std::size_t input_size() const {
        if (patch_size) return patch_size;
        return preset == "table1" ? dsp::kPatchSize : 64;
    }
    nnet::NetworkConfig network(int num_classes) const {
        return nnet::preset_config(preset, num_classes, static_cast<int>(input_size()));
    }
    bool uses(SpecKind k) const { return std::find(kinds.begin(), kinds.end(), k) != kinds.end(); }
    void validate() const;
};

/// CLI overrides applied before parsing.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> preset;
    std::optional<fs::path> output_dir;
};

namespace detail {

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items())
        if (!ok.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

inline json train_to_json(const nnet::TrainConfig& t) {
    return {{"optimizer", to_string(t.optimizer)},
            {"lr", t.lr},
            {"momentum", t.momentum},
            {"batch_size", t.batch_size},
            {"max_epochs", t.max_epochs},
            {"patience", t.patience},
            {"weight_decay", t.weight_decay}};
}

inline nnet::TrainConfig train_from_json(const json& j, nnet::TrainConfig t, const std::string& where) {
    check_keys(j, where, {"optimizer", "lr", "momentum", "batch_size", "max_epochs", "patience", "weight_decay"});
    if (j.contains("optimizer")) t.optimizer = nnet::parse_optimizer(j["optimizer"].get<std::string>());
    t.lr = j.value("lr", t.lr);
    t.momentum = j.value("momentum", t.momentum);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.max_epochs = j.value("max_epochs", t.max_epochs);
    t.patience = j.value("patience", t.patience);
    t.weight_decay = j.value("weight_decay", t.weight_decay);
    return t;
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
    if (manifest.has_value() == synth.has_value())
        throw ConfigError("dataset: give exactly one of 'manifest' or 'synthetic'");
    if (synth) synth->validate();
    if (!(sample_rate > 0.0)) throw ConfigError("sample_rate must be > 0");
    if (kinds.empty()) throw ConfigError("kinds: at least one spectrogram kind is required");
    std::set<SpecKind> seen;
    for (auto k : kinds)
        if (!seen.insert(k).second) throw ConfigError("kinds: '" + to_string(k) + "' listed twice");
    if (preset != "table1" && preset != "vgg-mini")
        throw ConfigError("unknown preset '" + preset + "' (expected table1 or vgg-mini)");
    for (auto k : kinds) {
        const auto g = geometry(k);
        if (g.width == 0 || g.shift == 0) throw ConfigError("patches." + to_string(k) + ": width and shift must be >= 1");
    }
    train.validate();
    if (le.enabled) {
        le.train.validate();
        if (le.num_superclasses < 0) throw ConfigError("label_expansion.num_superclasses must be >= 2 or \"auto\"");
        if (le.settings.gamma < 0.0 || le.settings.gamma > 1.0) throw ConfigError("label_expansion.gamma must be in [0,1]");
    }
    for (const auto& p : fusion.pairs)
        for (auto k : {p.first, p.second})
            if (!uses(k))
                throw ConfigError("fusion pair " + fusion::pair_name(p) + " needs kind '" + to_string(k) +
                                  "', which is not in 'kinds'");
    if (!(fusion.pca_threshold > 0.0 && fusion.pca_threshold <= 1.0))
        throw ConfigError("fusion.pca_threshold must be in (0,1]");
    if (!(fusion.svm_c > 0.0)) throw ConfigError("fusion.svm_c must be > 0");
    if (split.test_fold < 0) throw ConfigError("split.test_fold must be >= 0");
    if (!(split.validation_fraction > 0.0 && split.validation_fraction < 1.0))
        throw ConfigError("split.validation_fraction must be in (0,1)");
    if (split.num_folds < 2) throw ConfigError("split.num_folds must be >= 2");
}

/// Canonical form; also the input to the config hash (output_dir excluded).
inline json to_json(const ExperimentConfig& c) {
    json ds;
    if (c.manifest) ds["manifest"] = c.manifest->generic_string();
    if (c.synth) {
        json s = to_json(*c.synth);
        s.erase("seed");
        ds["synthetic"] = s;
    }
    json kinds = json::array(), patches = json::object(), pairs = json::array();
    for (auto k : c.kinds) {
        kinds.push_back(to_string(k));
        const auto g = c.geometry(k);
        patches[to_string(k)] = {{"width", g.width}, {"shift", g.shift}, {"expected", g.expected}};
    }
    for (const auto& p : c.fusion.pairs) pairs.push_back(fusion::pair_name(p));
    json le = {{"enabled", c.le.enabled},
               {"num_superclasses", c.le.num_superclasses ? json(c.le.num_superclasses) : json("auto")},
               {"gamma", c.le.settings.gamma},
               {"alpha", c.le.settings.alpha},
               {"beta", c.le.settings.beta},
               {"global_decay", c.le.settings.global_decay},
               {"train", detail::train_to_json(c.le.train)}};
    return {{"name", c.name},
            {"dataset", ds},
            {"sample_rate", c.sample_rate},
            {"kinds", kinds},
            {"spectrogram",
             {{"stft", {{"window", c.stft.window}, {"hop", c.stft.hop}}},
              {"cqt",
               {{"fmin", c.cqt.fmin}, {"bins_per_octave", c.cqt.bins_per_octave}, {"n_bins", c.cqt.n_bins}, {"hop", c.cqt.hop}}},
              {"mfcc",
               {{"frame_ms", c.mfcc.frame_ms}, {"hop_ms", c.mfcc.hop_ms}, {"n_mels", c.mfcc.n_mels}, {"n_coeffs", c.mfcc.n_coeffs}}}}},
            {"patches", patches},
            {"patch_size", c.input_size()},
            {"preset", c.preset},
            {"train", detail::train_to_json(c.train)},
            {"label_expansion", le},
            {"fusion", {{"pairs", pairs}, {"pca_threshold", c.fusion.pca_threshold}, {"svm_c", c.fusion.svm_c}}},
            {"split",
             {{"test_fold", c.split.test_fold},
              {"validation_fraction", c.split.validation_fraction},
              {"num_folds", c.split.num_folds}}},
            {"seeds",
             {{"data", c.seeds.data}, {"init", c.seeds.init}, {"shuffle", c.seeds.shuffle}, {"permutation", c.seeds.permutation}}},
            {"report", {{"svg", c.svg}}}};
}

inline std::string config_hash(const ExperimentConfig& c) {
    const std::string s = to_json(c).dump();
    return hex64(fnv1a64(s.data(), s.size()));
}

/// Relative dataset paths resolve against `base_dir` (the config file's folder).
inline ExperimentConfig config_from_json(json j, const fs::path& base_dir = {}, const Overrides& ov = {}) {
    if (ov.seed) j["seeds"] = {{"data", *ov.seed}, {"init", *ov.seed}, {"shuffle", *ov.seed}, {"permutation", *ov.seed}};
    if (ov.preset) j["preset"] = *ov.preset;
    ExperimentConfig c;
    try {
        detail::check_keys(j, "config",
                           {"name", "output_dir", "dataset", "sample_rate", "kinds", "spectrogram", "patches", "patch_size",
                            "preset", "train", "label_expansion", "fusion", "split", "seeds", "report"});
        c.name = j.value("name", c.name);
        if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
        if (ov.output_dir) c.output_dir = *ov.output_dir;

        const json& ds = j.at("dataset");
        detail::check_keys(ds, "dataset", {"manifest", "synthetic"});
        if (ds.contains("manifest")) {
            fs::path p = ds["manifest"].get<std::string>();
            c.manifest = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
        }
        if (ds.contains("synthetic")) {
            detail::check_keys(ds["synthetic"], "dataset.synthetic",
                               {"classes", "segments_per_class", "duration_s", "sample_rate", "num_folds", "label_noise",
                                "clean_fold"});
            c.synth = synth_spec_from_json(ds["synthetic"]);
        }
        c.sample_rate = j.value("sample_rate", c.synth ? c.synth->sample_rate : c.sample_rate);
        if (j.contains("kinds")) {
            c.kinds.clear();
            for (const auto& k : j["kinds"]) c.kinds.push_back(dsp::parse_kind(k.get<std::string>()));
        }
        if (j.contains("spectrogram")) {
            const json& s = j["spectrogram"];
            detail::check_keys(s, "spectrogram", {"stft", "cqt", "mfcc"});
            if (s.contains("stft")) {
                detail::check_keys(s["stft"], "spectrogram.stft", {"window", "hop"});
                c.stft.window = s["stft"].value("window", c.stft.window);
                c.stft.hop = s["stft"].value("hop", c.stft.hop);
            }
            if (s.contains("cqt")) {
                detail::check_keys(s["cqt"], "spectrogram.cqt", {"fmin", "bins_per_octave", "n_bins", "hop"});
                c.cqt.fmin = s["cqt"].value("fmin", c.cqt.fmin);
                c.cqt.bins_per_octave = s["cqt"].value("bins_per_octave", c.cqt.bins_per_octave);
                c.cqt.n_bins = s["cqt"].value("n_bins", c.cqt.n_bins);
                c.cqt.hop = s["cqt"].value("hop", c.cqt.hop);
            }
            if (s.contains("mfcc")) {
                detail::check_keys(s["mfcc"], "spectrogram.mfcc", {"frame_ms", "hop_ms", "n_mels", "n_coeffs"});
                c.mfcc.frame_ms = s["mfcc"].value("frame_ms", c.mfcc.frame_ms);
                c.mfcc.hop_ms = s["mfcc"].value("hop_ms", c.mfcc.hop_ms);
                c.mfcc.n_mels = s["mfcc"].value("n_mels", c.mfcc.n_mels);
                c.mfcc.n_coeffs = s["mfcc"].value("n_coeffs", c.mfcc.n_coeffs);
            }
        }
        if (j.contains("patches")) {
            detail::check_keys(j["patches"], "patches", {"stft", "cqt", "mfcc"});
            for (const auto& [k, v] : j["patches"].items()) {
                detail::check_keys(v, "patches." + k, {"width", "shift", "expected"});
                const SpecKind kind = dsp::parse_kind(k);
                PatchGeometry g = default_geometry(kind);
                g.width = v.value("width", g.width);
                g.shift = v.value("shift", g.shift);
                g.expected = v.value("expected", g.expected);
                c.patches[kind] = g;
            }
        }
        c.patch_size = j.value("patch_size", c.patch_size);
        c.preset = j.value("preset", c.preset);
        if (j.contains("train")) c.train = detail::train_from_json(j["train"], c.train, "train");

        c.le.train = c.train;
        c.le.settings.alpha = c.train.weight_decay;
        if (j.contains("label_expansion")) {
            const json& le = j["label_expansion"];
            detail::check_keys(le, "label_expansion",
                               {"enabled", "num_superclasses", "gamma", "alpha", "beta", "global_decay", "train"});
            c.le.enabled = le.value("enabled", c.le.enabled);
            if (le.contains("num_superclasses")) {
                const json& n = le["num_superclasses"];
                if (n.is_string()) {
                    if (n.get<std::string>() != "auto")
                        throw ConfigError("label_expansion.num_superclasses must be an integer or \"auto\"");
                } else {
                    c.le.num_superclasses = n.get<int>();
                    if (c.le.num_superclasses < 2) throw ConfigError("label_expansion.num_superclasses must be >= 2");
                }
            }
            c.le.settings.gamma = le.value("gamma", c.le.settings.gamma);
            c.le.settings.alpha = le.value("alpha", c.le.settings.alpha);
            c.le.settings.beta = le.value("beta", c.le.settings.beta);
            c.le.settings.global_decay = le.value("global_decay", c.le.settings.global_decay);
            if (le.contains("train")) c.le.train = detail::train_from_json(le["train"], c.le.train, "label_expansion.train");
        }
        if (j.contains("fusion")) {
            const json& f = j["fusion"];
            detail::check_keys(f, "fusion", {"pairs", "pca_threshold", "svm_c"});
            if (f.contains("pairs"))
                for (const auto& p : f["pairs"]) c.fusion.pairs.push_back(fusion::parse_pair(p.get<std::string>()));
            c.fusion.pca_threshold = f.value("pca_threshold", c.fusion.pca_threshold);
            c.fusion.svm_c = f.value("svm_c", c.fusion.svm_c);
        } else {
            for (const auto& p : fusion::supported_pairs())
                if (c.uses(p.first) && c.uses(p.second)) c.fusion.pairs.push_back(p);
        }
        if (j.contains("split")) {
            detail::check_keys(j["split"], "split", {"test_fold", "validation_fraction", "num_folds"});
            c.split.test_fold = j["split"].value("test_fold", c.split.test_fold);
            c.split.validation_fraction = j["split"].value("validation_fraction", c.split.validation_fraction);
            c.split.num_folds = j["split"].value("num_folds", c.split.num_folds);
        }
        if (c.synth) c.split.num_folds = c.synth->num_folds;

        if (!j.contains("seeds")) throw ConfigError("config: 'seeds' is required (data, init, shuffle, permutation)");
        const json& s = j["seeds"];
        detail::check_keys(s, "seeds", {"data", "init", "shuffle", "permutation"});
        for (const char* k : {"data", "init", "shuffle", "permutation"})
            if (!s.contains(k)) throw ConfigError(std::string("seeds: '") + k + "' is required");
        c.seeds = {s["data"].get<std::uint64_t>(), s["init"].get<std::uint64_t>(), s["shuffle"].get<std::uint64_t>(),
                   s["permutation"].get<std::uint64_t>()};
        if (c.synth) c.synth->seed = c.seeds.data;
        if (j.contains("report")) {
            detail::check_keys(j["report"], "report", {"svg"});
            c.svg = j["report"].value("svg", c.svg);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const fs::path& path, const Overrides& ov = {}) {
    auto c = config_from_json(read_json(path), path.parent_path(), ov);
    if (c.output_dir.empty()) throw ConfigError(path.string() + ": 'output_dir' is required (or pass --out)");
    return c;
}

}  // namespace ascfuse::pipeline
