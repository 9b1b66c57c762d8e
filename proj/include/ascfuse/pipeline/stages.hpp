#pragma once

#include <array>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ascfuse/dsp/audio.hpp"
#include "ascfuse/dsp/patches.hpp"
#include "ascfuse/dsp/spectrogram.hpp"
#include "ascfuse/fusion.hpp"
#include "ascfuse/labelexp.hpp"
#include "ascfuse/nnet.hpp"
#include "ascfuse/pipeline/config.hpp"
#include "ascfuse/pipeline/files.hpp"
#include "ascfuse/pipeline/manifest.hpp"
#include "ascfuse/pipeline/parallel.hpp"
#include "ascfuse/pipeline/report.hpp"
#include "ascfuse/pipeline/synth.hpp"

namespace ascfuse::pipeline {

enum class Stage { dataset, spectrogram, train_basic, expand, train_le, extract, fuse, evaluate, report };

inline constexpr std::array<Stage, 9> kStages{Stage::dataset,  Stage::spectrogram, Stage::train_basic,
                                              Stage::expand,   Stage::train_le,    Stage::extract,
                                              Stage::fuse,     Stage::evaluate,    Stage::report};

inline std::string stage_name(Stage s) {
    switch (s) {
        case Stage::dataset: return "dataset";
        case Stage::spectrogram: return "spectrogram";
        case Stage::train_basic: return "train-basic";
        case Stage::expand: return "expand";
        case Stage::train_le: return "train-le";
        case Stage::extract: return "extract";
        case Stage::fuse: return "fuse";
        case Stage::evaluate: return "evaluate";
        case Stage::report: return "report";
    }
    return "?";
}

inline Stage parse_stage(const std::string& s) {
    for (Stage st : kStages)
        if (stage_name(st) == s) return st;
    throw ConfigError("unknown stage '" + s + "'");
}

inline std::vector<Stage> prerequisites(Stage s) {
    switch (s) {
        case Stage::dataset: return {};
        case Stage::spectrogram: return {Stage::dataset};
        case Stage::train_basic: return {Stage::spectrogram};
        case Stage::expand: return {Stage::train_basic};
        case Stage::train_le: return {Stage::expand};
        case Stage::extract: return {Stage::train_basic, Stage::train_le};
        case Stage::fuse: return {Stage::extract};
        case Stage::evaluate: return {Stage::extract, Stage::fuse};
        case Stage::report: return {Stage::evaluate};
    }
    return {};
}

/// Record written after a stage completes: config hash, digests of the
/// prerequisite stamps, and a checksum per output file.
struct Stamp {
    std::string stage;
    std::string config_hash;
    std::map<std::string, std::string> inputs;
    std::map<std::string, std::string> outputs;
    json info = json::object();

    std::string digest() const {
        const std::string s = json{{"h", config_hash}, {"o", outputs}}.dump();
        return hex64(fnv1a64(s.data(), s.size()));
    }
};

inline json to_json(const Stamp& s) {
    return {{"stage", s.stage}, {"config_hash", s.config_hash}, {"inputs", s.inputs}, {"outputs", s.outputs}, {"info", s.info}};
}

inline Stamp stamp_from_json(const json& j) {
    Stamp s;
    s.stage = j.at("stage").get<std::string>();
    s.config_hash = j.at("config_hash").get<std::string>();
    s.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    s.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    s.info = j.value("info", json::object());
    return s;
}

struct StageOutcome {
    Stage stage;
    bool skipped = false;
};

/// Model display names, e.g. VGG-STFT and VGG-STFT-LE.
inline std::string model_name(SpecKind k, bool le) { return "VGG-" + dsp::display_name(k) + (le ? "-LE" : ""); }

/// One experiment's working directory and the stages that fill it.
class Workspace {
public:
    using Logger = std::function<void(const std::string&)>;

    explicit Workspace(ExperimentConfig cfg, Logger log = default_logger())
        : cfg_(std::move(cfg)), hash_(config_hash(cfg_)), log_(std::move(log)) {
        if (cfg_.output_dir.empty()) throw ConfigError("output_dir is not set");
    }

    static Logger default_logger() {
        return [](const std::string& m) { std::cerr << m << '\n'; };
    }

    const ExperimentConfig& config() const { return cfg_; }
    const std::string& hash() const { return hash_; }
    const fs::path& root() const { return cfg_.output_dir; }

    fs::path stage_dir(Stage s) const {
        switch (s) {
            case Stage::dataset: return root() / "dataset";
            case Stage::spectrogram: return root() / "spectrograms";
            case Stage::train_basic: return root() / "models" / "basic";
            case Stage::expand: return root() / "expand";
            case Stage::train_le: return root() / "models" / "le";
            case Stage::extract: return root() / "features";
            case Stage::fuse: return root() / "fusion";
            case Stage::evaluate: return root() / "eval";
            case Stage::report: return root() / "report";
        }
        return root();
    }
    fs::path stamp_path(Stage s) const { return root() / "stamps" / (stage_name(s) + ".json"); }

    std::optional<Stamp> read_stamp(Stage s) const {
        if (!fs::exists(stamp_path(s))) return std::nullopt;
        try {
            return stamp_from_json(read_json(stamp_path(s)));
        } catch (const json::exception& e) {
            throw StageError("corrupt stamp " + stamp_path(s).string() + ": " + e.what());
        }
    }

    /// Empty string when every recorded output exists with its checksum.
    std::string verify_outputs(const Stamp& st) const {
        for (const auto& [rel, sum] : st.outputs) {
            const fs::path p = root() / rel;
            if (!fs::exists(p)) return rel + " is missing";
            if (checksum_hex(p) != sum) return rel + " was modified";
        }
        return {};
    }

    /// Prerequisite stamp, checked for presence, config hash and integrity.
    Stamp require(Stage needed, Stage by) const {
        const auto st = read_stamp(needed);
        if (!st)
            throw StageError("stage '" + stage_name(by) + "' needs the outputs of '" + stage_name(needed) + "'; run '" +
                             stage_name(needed) + "' first");
        if (st->config_hash != hash_)
            throw StageError("outputs of '" + stage_name(needed) + "' come from a different configuration (config hash " +
                             st->config_hash + ", current " + hash_ + "); rerun '" + stage_name(needed) + "' first");
        if (const auto bad = verify_outputs(*st); !bad.empty())
            throw StageError("outputs of '" + stage_name(needed) + "' changed on disk (" + bad + "); rerun '" +
                             stage_name(needed) + "' first");
        return *st;
    }

    /// Runs one stage unless its stamp shows it is already up to date.
    StageOutcome run(Stage s, bool force = false) {
        Stamp st;
        st.stage = stage_name(s);
        st.config_hash = hash_;
        for (Stage p : prerequisites(s)) st.inputs[stage_name(p)] = require(p, s).digest();
        if (!force) {
            if (const auto old = read_stamp(s);
                old && old->config_hash == hash_ && old->inputs == st.inputs && verify_outputs(*old).empty()) {
                log_(stage_name(s) + ": up to date");
                return {s, true};
            }
        }
        fs::remove(stamp_path(s));
        fs::remove_all(stage_dir(s));
        fs::create_directories(stage_dir(s));
        log_(stage_name(s) + ": running");
        st.info = execute(s);
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(stage_dir(s)))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) st.outputs[fs::relative(f, root()).generic_string()] = checksum_hex(f);
        write_json(stamp_path(s), to_json(st));
        log_(stage_name(s) + ": done");
        return {s, false};
    }

    std::vector<StageOutcome> run_all(bool force = false) {
        std::vector<StageOutcome> out;
        for (Stage s : kStages) out.push_back(run(s, force));
        return out;
    }

    Summary summary() const {
        require(Stage::evaluate, Stage::report);
        return summary_from_json(read_json(stage_dir(Stage::evaluate) / "summary.json"));
    }

    DatasetManifest manifest() const { return load_manifest(stage_dir(Stage::dataset) / "manifest.json"); }

private:
    ExperimentConfig cfg_;
    std::string hash_;
    Logger log_;

    json execute(Stage s) {
        switch (s) {
            case Stage::dataset: return run_dataset();
            case Stage::spectrogram: return run_spectrogram();
            case Stage::train_basic: return run_train_basic();
            case Stage::expand: return run_expand();
            case Stage::train_le: return run_train_le();
            case Stage::extract: return run_extract();
            case Stage::fuse: return run_fuse();
            case Stage::evaluate: return run_evaluate();
            case Stage::report: return run_report();
        }
        return {};
    }

    int kind_index(SpecKind k) const {
        return static_cast<int>(std::find(cfg_.kinds.begin(), cfg_.kinds.end(), k) - cfg_.kinds.begin());
    }
    bool is_test(const SegmentEntry& s) const { return s.fold == cfg_.split.test_fold; }

    std::vector<std::string> variants() const {
        if (cfg_.le.enabled) return {"basic", "le"};
        return {"basic"};
    }

    // ------------------------------------------------------------ dataset

    json run_dataset() {
        const fs::path dir = stage_dir(Stage::dataset);
        DatasetManifest m;
        if (cfg_.synth) {
            m = synth_dataset(*cfg_.synth, dir, cfg_.stft.window);
        } else {
            m = load_manifest(*cfg_.manifest);
            validate(m);
            if (!m.has_folds()) assign_folds(m, cfg_.split.num_folds, Rng::derive(cfg_.seeds.data, 0xF01D).next_u64());
            if (m.num_folds == 0)
                for (const auto& s : m.segments) m.num_folds = std::max(m.num_folds, s.fold + 1);
        }
        validate(m);
        if (cfg_.split.test_fold >= m.num_folds)
            throw ConfigError("split.test_fold is " + std::to_string(cfg_.split.test_fold) + " but the dataset has " +
                              std::to_string(m.num_folds) + " folds");
        check_fold_coverage(m);
        check_leakage(m);
        json sums = json::object();
        for (const auto& s : m.segments) sums[s.id] = checksum_hex(s.wav);
        if (!cfg_.synth) save_manifest(dir / "manifest.json", m);
        write_json(dir / "audio_checksums.json", sums);
        return {{"segments", m.segments.size()}, {"classes", m.num_classes()}, {"folds", m.num_folds}};
    }

    // -------------------------------------------------------- spectrogram

    dsp::Spectrogram make_spectrogram(const dsp::AudioSegment& a, SpecKind k) const {
        switch (k) {
            case SpecKind::stft: return dsp::stft_spectrogram(a, cfg_.stft);
            case SpecKind::cqt: return dsp::cqt_spectrogram(a, cfg_.cqt);
            case SpecKind::mfcc: return dsp::mfcc_spectrogram(a, cfg_.mfcc);
        }
        throw ConfigError("unknown kind");
    }

    fs::path patch_file(SpecKind k, const std::string& id) const {
        return stage_dir(Stage::spectrogram) / to_string(k) / (id + "." + to_string(k) + ".patches.atns");
    }

    json run_spectrogram() {
        const auto m = manifest();
        const std::size_t n = m.segments.size(), K = cfg_.kinds.size();
        std::vector<std::size_t> counts(n * K, 0);
        for (auto k : cfg_.kinds) fs::create_directories(stage_dir(Stage::spectrogram) / to_string(k));
        parallel_for(n, [&](std::size_t i) {
            const auto& e = m.segments[i];
            auto audio = dsp::load_wav(e.wav);
            audio.segment_id = e.id;
            if (audio.sample_rate != cfg_.sample_rate) audio = dsp::resample_linear(audio, cfg_.sample_rate);
            for (std::size_t ki = 0; ki < K; ++ki) {
                const SpecKind k = cfg_.kinds[ki];
                dsp::Spectrogram spec;
                try {
                    spec = make_spectrogram(audio, k);
                } catch (const DataError& err) {
                    throw DataError("segment '" + e.id + "' (" + to_string(k) + "): " + err.what());
                }
                Tensor t = Tensor::from_matrix(spec.values);
                t.dtype = DType::f32;
                tensor_write(stage_dir(Stage::spectrogram) / to_string(k) / (e.id + "." + to_string(k) + ".atns"), t);
                const auto g = cfg_.geometry(k);
                std::vector<dsp::Patch> patches;
                try {
                    patches = dsp::split_patches(spec, g.width, g.shift, cfg_.input_size(), e.id);
                } catch (const DataError& err) {
                    throw DataError("segment '" + e.id + "' (" + to_string(k) + "): " + err.what());
                }
                tensor_write(patch_file(k, e.id), dsp::patches_to_tensor(patches));
                counts[i * K + ki] = patches.size();
            }
        });
        json index = json::array();
        for (std::size_t i = 0; i < n; ++i) {
            json pc = json::object();
            for (std::size_t ki = 0; ki < K; ++ki) pc[to_string(cfg_.kinds[ki])] = counts[i * K + ki];
            index.push_back({{"id", m.segments[i].id}, {"patches", pc}});
        }
        write_json(stage_dir(Stage::spectrogram) / "index.json", index);
        json info = json::object();
        for (std::size_t ki = 0; ki < K; ++ki) {
            const auto [lo, hi] = patch_range(counts, ki, K);
            const auto g = cfg_.geometry(cfg_.kinds[ki]);
            if (g.expected && (lo != g.expected || hi != g.expected))
                log_("warning: " + to_string(cfg_.kinds[ki]) + " gives " + std::to_string(lo) + ".." + std::to_string(hi) +
                     " patches per segment, expected " + std::to_string(g.expected));
            info[to_string(cfg_.kinds[ki])] = {{"min_patches", lo}, {"max_patches", hi}};
        }
        return info;
    }

    static std::pair<std::size_t, std::size_t> patch_range(const std::vector<std::size_t>& counts, std::size_t ki,
                                                           std::size_t K) {
        std::size_t lo = SIZE_MAX, hi = 0;
        for (std::size_t i = ki; i < counts.size(); i += K) {
            lo = std::min(lo, counts[i]);
            hi = std::max(hi, counts[i]);
        }
        return {lo, hi};
    }

    // ------------------------------------------------------------- models

    /// Patches of the given segments; groups hold the segment's manifest index.
    nnet::PatchSet<float> load_patches(SpecKind k, const DatasetManifest& m, const std::vector<std::size_t>& segs) const {
        nnet::PatchSet<float> set;
        const auto S = static_cast<int>(cfg_.input_size());
        set.shape = {1, S, S};
        for (std::size_t i : segs) {
            const Tensor t = tensor_read(patch_file(k, m.segments[i].id));
            if (t.dims.size() != 3 || t.dims[1] != static_cast<std::uint32_t>(S) || t.dims[2] != static_cast<std::uint32_t>(S))
                throw ShapeError("patch tensor for '" + m.segments[i].id + "' does not match the network input");
            set.data.insert(set.data.end(), t.values.begin(), t.values.end());
            for (std::uint32_t p = 0; p < t.dims[0]; ++p) {
                set.labels.push_back(m.segments[i].label);
                set.groups.push_back(static_cast<int>(i));
            }
        }
        return set;
    }

    std::vector<std::size_t> segments_where(const DatasetManifest& m, bool test) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < m.segments.size(); ++i)
            if (is_test(m.segments[i]) == test) out.push_back(i);
        return out;
    }

    struct TrainVal {
        nnet::PatchSet<float> train, validation;
    };

    /// Group-level split of the training folds; identical for every kind.
    TrainVal training_split(SpecKind k, const DatasetManifest& m) const {
        const auto all = load_patches(k, m, segments_where(m, false));
        const auto sp = nnet::stratified_split(all.labels, all.groups, cfg_.split.validation_fraction, cfg_.seeds.data);
        return {all.subset(sp.train), all.subset(sp.validation)};
    }

    fs::path model_base(const std::string& variant, SpecKind k) const {
        return stage_dir(variant == "le" ? Stage::train_le : Stage::train_basic) / to_string(k);
    }

    json run_train_basic() {
        const auto m = manifest();
        json info = json::object();
        for (SpecKind k : cfg_.kinds) {
            const auto ki = static_cast<std::uint64_t>(kind_index(k));
            auto [tr, va] = training_split(k, m);
            Rng init = Rng::derive(cfg_.seeds.init, ki);
            auto net = nnet::Network<float>::build(cfg_.network(m.num_classes()), init);
            nnet::TrainConfig tc = cfg_.train;
            tc.seed = Rng::derive(cfg_.seeds.shuffle, ki).next_u64();
            log_("train-basic: " + model_name(k, false) + " on " + std::to_string(tr.size()) + " patches (" +
                 std::to_string(va.size()) + " validation)");
            const auto hist = nnet::train(net, tr, va, tc, nnet::LossSpec::basic(tc.weight_decay));
            const auto& best = hist.best();
            nnet::save_checkpoint(model_base("basic", k), net,
                                  {hist.best_epoch, tc.seed, {{"kind", to_string(k)}, {"variant", "basic"}}});
            write_text(model_base("basic", k).string() + ".history.csv", hist.to_csv());
            info[to_string(k)] = {{"best_epoch", hist.best_epoch},
                                  {"epochs", hist.epochs.size()},
                                  {"val_loss", best.val_loss},
                                  {"val_acc", best.val_acc}};
            log_("train-basic: " + model_name(k, false) + " best epoch " + std::to_string(hist.best_epoch) +
                 ", validation accuracy " + fmt4(best.val_acc));
        }
        return info;
    }

    fs::path partition_file(SpecKind k) const { return stage_dir(Stage::expand) / (to_string(k) + ".partition.json"); }

    json run_expand() {
        if (!cfg_.le.enabled) return {{"enabled", false}};
        const auto m = manifest();
        const int C = m.num_classes();
        if (C < 3) throw ConfigError("label expansion needs at least 3 classes, the dataset has " + std::to_string(C));
        json info = json::object();
        for (SpecKind k : cfg_.kinds) {
            const auto ki = static_cast<std::uint64_t>(kind_index(k));
            auto net = nnet::load_checkpoint<float>(model_base("basic", k));
            const auto va = training_split(k, m).validation;
            const Matrix proba = nnet::predict_proba(net, va);
            std::vector<int> pred(proba.rows());
            for (std::size_t i = 0; i < proba.rows(); ++i) pred[i] = static_cast<int>(nnet::argmax(proba.row(i)));
            const auto f = labelexp::confusion_matrix(va.labels, pred, C, "validation");
            Matrix d = labelexp::symmetrize(f.counts);
            std::string source = "counts";
            if (has_isolated_class(d)) {
                // A (near) perfect validation run leaves classes without any
                // confusion mass; fall back to expected counts from the softmax.
                Matrix soft(C, C);
                for (std::size_t i = 0; i < proba.rows(); ++i)
                    for (int c = 0; c < C; ++c) soft(va.labels[i], c) += proba(i, c);
                d = labelexp::symmetrize(soft);
                source = "expected-counts";
            }
            const int N = cfg_.le.num_superclasses ? cfg_.le.num_superclasses : labelexp::choose_num_superclasses(d);
            if (N >= C)
                throw ConfigError("label_expansion.num_superclasses (" + std::to_string(N) + ") must be below the class count " +
                                  std::to_string(C));
            const std::uint64_t seed = Rng::derive(cfg_.seeds.data, 0xC1u + ki).next_u64();
            Rng rng(seed);
            const auto p = labelexp::spectral_cluster(d, N, rng);
            write_text(stage_dir(Stage::expand) / (to_string(k) + ".confusion.csv"), labelexp::confusion_to_csv(f));
            json pj = labelexp::partition_to_json(p, model_name(k, false), seed);
            pj["affinity_source"] = source;
            pj["class_names"] = m.class_names;
            write_json(partition_file(k), pj);
            info[to_string(k)] = {{"num_superclasses", N}, {"subsets", p.subsets}, {"affinity_source", source}};
            std::string desc;
            for (const auto& h : p.subsets) {
                desc += " {";
                for (std::size_t j = 0; j < h.size(); ++j) desc += (j ? "," : "") + m.class_names[h[j]];
                desc += "}";
            }
            log_("expand: " + model_name(k, false) + " super-classes" + desc);
        }
        return info;
    }

    static bool has_isolated_class(const Matrix& d) {
        for (std::size_t i = 0; i < d.rows(); ++i) {
            double deg = 0.0;
            for (std::size_t j = 0; j < d.cols(); ++j)
                if (j != i) deg += d(i, j);
            if (deg <= 0.0) return true;
        }
        return false;
    }

    json run_train_le() {
        if (!cfg_.le.enabled) return {{"enabled", false}};
        const auto m = manifest();
        json info = json::object();
        for (SpecKind k : cfg_.kinds) {
            const auto ki = static_cast<std::uint64_t>(kind_index(k));
            const auto p = labelexp::partition_from_json(read_json(partition_file(k)));
            auto net = nnet::load_checkpoint<float>(model_base("basic", k));
            labelexp::attach_superclass_head(net, p);
            auto [tr, va] = training_split(k, m);
            nnet::TrainConfig tc = cfg_.le.train;
            tc.seed = Rng::derive(cfg_.seeds.shuffle, 0x1E00u + ki).next_u64();
            log_("train-le: " + model_name(k, true) + " with " + std::to_string(p.num_superclasses()) + " super-classes");
            const auto hist = labelexp::finetune_le(net, p, tr, va, tc, cfg_.le.settings);
            const auto& best = hist.best();
            nnet::save_checkpoint(model_base("le", k), net,
                                  {hist.best_epoch, tc.seed, {{"kind", to_string(k)}, {"variant", "le"}}});
            write_text(model_base("le", k).string() + ".history.csv", hist.to_csv());
            info[to_string(k)] = {{"best_epoch", hist.best_epoch}, {"val_loss", best.val_loss}, {"val_acc", best.val_acc}};
            log_("train-le: " + model_name(k, true) + " best epoch " + std::to_string(hist.best_epoch) +
                 ", validation accuracy " + fmt4(best.val_acc));
        }
        return info;
    }

    // ------------------------------------------------------------ extract

    fs::path feature_base(const std::string& variant, SpecKind k) const {
        return stage_dir(Stage::extract) / variant / to_string(k);
    }

    json run_extract() {
        const auto m = manifest();
        std::vector<std::size_t> all(m.segments.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        json index = json::object();
        for (SpecKind k : cfg_.kinds) {
            json rows = json::array();
            std::size_t offset = 0;
            for (std::size_t i : all) {
                const Tensor t = tensor_read(patch_file(k, m.segments[i].id));
                rows.push_back({{"id", m.segments[i].id}, {"offset", offset}, {"count", t.dims[0]}});
                offset += t.dims[0];
            }
            index[to_string(k)] = rows;
        }
        write_json(stage_dir(Stage::extract) / "index.json", index);
        for (const auto& variant : variants()) {
            for (SpecKind k : cfg_.kinds) {
                auto net = nnet::load_checkpoint<float>(model_base(variant, k));
                std::vector<double> fv, pv;
                // Segment at a time keeps memory bounded on large sets.
                for (std::size_t i : all) {
                    const auto set = load_patches(k, m, {i});
                    const Matrix f = nnet::extract_deep_features(net, set);
                    const Matrix p = nnet::predict_proba(net, set);
                    fv.insert(fv.end(), f.data().begin(), f.data().end());
                    pv.insert(pv.end(), p.data().begin(), p.data().end());
                }
                const std::size_t L = net.feature_length(), C = static_cast<std::size_t>(net.num_classes());
                Tensor ft;
                ft.dtype = DType::f32;
                ft.dims = {static_cast<std::uint32_t>(fv.size() / L), static_cast<std::uint32_t>(L)};
                ft.values = std::move(fv);
                Tensor pt;
                pt.dtype = DType::f64;
                pt.dims = {static_cast<std::uint32_t>(pv.size() / C), static_cast<std::uint32_t>(C)};
                pt.values = std::move(pv);
                fs::create_directories(feature_base(variant, k).parent_path());
                tensor_write(feature_base(variant, k).string() + ".features.atns", ft);
                tensor_write(feature_base(variant, k).string() + ".proba.atns", pt);
            }
        }
        return {{"variants", variants()}};
    }

    struct SegmentRows {
        std::size_t offset = 0, count = 0;
    };

    std::vector<SegmentRows> feature_index(SpecKind k, const DatasetManifest& m) const {
        const auto j = read_json(stage_dir(Stage::extract) / "index.json").at(to_string(k));
        if (j.size() != m.segments.size()) throw StageError("feature index does not match the manifest; rerun 'extract'");
        std::vector<SegmentRows> out;
        for (std::size_t i = 0; i < j.size(); ++i) {
            if (j[i].at("id").get<std::string>() != m.segments[i].id)
                throw StageError("feature index order does not match the manifest; rerun 'extract'");
            out.push_back({j[i].at("offset").get<std::size_t>(), j[i].at("count").get<std::size_t>()});
        }
        return out;
    }

    static Matrix rows_of(const Matrix& all, const SegmentRows& r) {
        Matrix out(r.count, all.cols());
        for (std::size_t p = 0; p < r.count; ++p) {
            const auto src = all.row(r.offset + p);
            std::copy(src.begin(), src.end(), out.row(p).begin());
        }
        return out;
    }

    // --------------------------------------------------------------- fuse

    static std::string slug(const fusion::KindPair& p) { return to_string(p.first) + "-" + to_string(p.second); }

    json run_fuse() {
        const auto m = manifest();
        const std::size_t n = m.segments.size();
        const auto train_idx = segments_where(m, false), test_idx = segments_where(m, true);
        std::vector<int> train_labels;
        for (std::size_t i : train_idx) train_labels.push_back(m.segments[i].label);

        // One permutation per (kind, segment), shared by every model and pair.
        std::map<SpecKind, std::vector<std::vector<std::size_t>>> orders;
        json perm_record = json::object();
        std::set<SpecKind> needed;
        for (const auto& p : cfg_.fusion.pairs) needed.insert({p.first, p.second});
        for (SpecKind k : needed) {
            const auto idx = feature_index(k, m);
            const std::uint64_t run_seed = Rng::derive(cfg_.seeds.permutation, static_cast<std::uint64_t>(k)).next_u64();
            json rec = json::object();
            for (std::size_t i = 0; i < n; ++i) {
                Rng rng = fusion::segment_rng(run_seed, m.segments[i].id);
                orders[k].push_back(rng.permutation(idx[i].count));
                rec[m.segments[i].id] = orders[k].back();
            }
            perm_record[to_string(k)] = rec;
        }
        write_json(stage_dir(Stage::fuse) / "permutations.json", perm_record);

        json info = json::object();
        for (const auto& variant : variants()) {
            std::map<SpecKind, Matrix> global;
            for (SpecKind k : needed) {
                const auto idx = feature_index(k, m);
                const Matrix feats = tensor_read(feature_base(variant, k).string() + ".features.atns").to_matrix();
                std::size_t pad = 0;
                for (const auto& r : idx) pad = std::max(pad, r.count);
                Matrix o(n, pad * feats.cols());
                for (std::size_t i = 0; i < n; ++i) {
                    const Matrix f = rows_of(feats, idx[i]);
                    const auto& order = orders[k][i];
                    for (std::size_t b = 0; b < order.size(); ++b) {
                        const auto row = f.row(order[b]);
                        std::copy(row.begin(), row.end(), o.row(i).begin() + static_cast<std::ptrdiff_t>(b * f.cols()));
                    }
                }
                fusion::TrainingRows tr{Matrix(train_idx.size(), o.cols()), {}};
                for (std::size_t r = 0; r < train_idx.size(); ++r) {
                    std::copy(o.row(train_idx[r]).begin(), o.row(train_idx[r]).end(), tr.rows.row(r).begin());
                    tr.segment_ids.push_back(m.segments[train_idx[r]].id);
                }
                const auto pca = fusion::pca_fit(tr, cfg_.fusion.pca_threshold);
                fusion::save_pca(stage_dir(Stage::fuse) / variant / ("pca-" + to_string(k)), pca);
                global[k] = fusion::pca_transform(pca, o);
                info[variant]["pca_" + to_string(k)] = {{"input_dim", pca.input_dim()}, {"output_dim", pca.output_dim()}};
            }
            for (const auto& pair : cfg_.fusion.pairs) {
                auto aggregate_row = [&](std::size_t i) {
                    fusion::GlobalFeatures g;
                    for (SpecKind k : {pair.first, pair.second}) {
                        const auto row = global.at(k).row(i);
                        g[k].assign(row.begin(), row.end());
                    }
                    return fusion::aggregate(g, pair, m.segments[i].id);
                };
                std::vector<std::vector<double>> train_rows, test_rows;
                for (std::size_t i : train_idx) train_rows.push_back(aggregate_row(i));
                for (std::size_t i : test_idx) test_rows.push_back(aggregate_row(i));
                fusion::SvmOptions opt;
                opt.c = cfg_.fusion.svm_c;
                opt.seed = Rng::derive(cfg_.seeds.permutation, 0x5F).next_u64();
                const auto svm = fusion::svm_train(fusion::stack_rows(train_rows), train_labels, m.num_classes(), opt);
                const fs::path dir = stage_dir(Stage::fuse) / variant;
                fusion::save_svm(dir / ("svm-" + slug(pair)), svm);
                const auto pred = svm.predict(fusion::stack_rows(test_rows));
                std::string csv = "segment_id,true,predicted\n";
                for (std::size_t t = 0; t < test_idx.size(); ++t)
                    csv += m.segments[test_idx[t]].id + "," + std::to_string(m.segments[test_idx[t]].label) + "," +
                           std::to_string(pred[t]) + "\n";
                write_text(dir / ("predictions-" + slug(pair) + ".csv"), csv);
                info[variant][fusion::pair_name(pair)] = {{"dim", svm.dim()}};
            }
        }
        return info;
    }

    // ----------------------------------------------------------- evaluate

    json run_evaluate() {
        const auto m = manifest();
        const auto test_idx = segments_where(m, true);
        const int C = m.num_classes();
        Summary sum;
        sum.config_hash = hash_;
        for (const auto& variant : variants()) {
            for (SpecKind k : cfg_.kinds) {
                const auto idx = feature_index(k, m);
                const Matrix proba = tensor_read(feature_base(variant, k).string() + ".proba.atns").to_matrix();
                ModelScore sc{model_name(k, variant == "le"), to_string(k), variant};
                std::size_t patch_ok = 0, seg_ok = 0;
                std::string csv = "segment_id,true,predicted_samples,predicted_voted\n";
                for (std::size_t i : test_idx) {
                    const Matrix p = rows_of(proba, idx[i]);
                    std::vector<int> votes(p.rows());
                    std::string joined;
                    for (std::size_t r = 0; r < p.rows(); ++r) {
                        votes[r] = static_cast<int>(nnet::argmax(p.row(r)));
                        patch_ok += votes[r] == m.segments[i].label;
                        joined += (r ? " " : "") + std::to_string(votes[r]);
                    }
                    const int voted = fusion::majority_vote(votes, C, &p);
                    seg_ok += voted == m.segments[i].label;
                    sc.patches += p.rows();
                    csv += m.segments[i].id + "," + std::to_string(m.segments[i].label) + "," + joined + "," +
                           std::to_string(voted) + "\n";
                }
                sc.segments = test_idx.size();
                sc.sample_level = sc.patches ? static_cast<double>(patch_ok) / static_cast<double>(sc.patches) : 0.0;
                sc.voting = sc.segments ? static_cast<double>(seg_ok) / static_cast<double>(sc.segments) : 0.0;
                write_text(stage_dir(Stage::evaluate) / (sc.model + ".csv"), csv);
                log_("evaluate: " + sc.model + " sample-level " + fmt4(sc.sample_level) + ", voting " + fmt4(sc.voting));
                sum.single.push_back(sc);
            }
        }
        for (const auto& variant : variants()) {
            for (const auto& pair : cfg_.fusion.pairs) {
                const auto text = read_text(stage_dir(Stage::fuse) / variant / ("predictions-" + slug(pair) + ".csv"));
                std::istringstream in(text);
                std::string line;
                std::getline(in, line);
                std::size_t total = 0, ok = 0;
                while (std::getline(in, line)) {
                    const auto a = line.find(','), b = line.rfind(',');
                    ok += line.substr(a + 1, b - a - 1) == line.substr(b + 1);
                    ++total;
                }
                FusionScore f{fusion::pair_name(pair), variant == "le" ? "VGG-LE" : "VGG",
                              total ? static_cast<double>(ok) / static_cast<double>(total) : 0.0, total};
                log_("evaluate: fusion " + f.pair + " (" + f.model + ") " + fmt4(f.accuracy));
                sum.fusion.push_back(f);
            }
        }
        write_json(stage_dir(Stage::evaluate) / "summary.json", to_json(sum));
        return {{"test_segments", test_idx.size()}};
    }

    // ------------------------------------------------------------- report

    json run_report() {
        for (Stage s : kStages) {
            if (s == Stage::report) continue;
            const auto st = read_stamp(s);
            if (st && st->config_hash != hash_)
                throw StageError("refusing to mix artifacts: '" + stage_name(s) + "' was produced with config hash " +
                                 st->config_hash + ", current is " + hash_);
        }
        const Summary sum = summary();
        if (sum.config_hash != hash_)
            throw StageError("refusing to mix artifacts: evaluation summary has config hash " + sum.config_hash +
                             ", current is " + hash_);
        const fs::path dir = stage_dir(Stage::report);
        write_text(dir / "report_single.csv", single_report_csv(sum));
        write_text(dir / "report_fusion.csv", fusion_report_csv(sum));
        write_json(dir / "report.json", to_json(sum));
        if (cfg_.svg) write_text(dir / "report.svg", accuracy_svg(sum));
        return {{"files", cfg_.svg ? 4 : 3}};
    }
};

}  // namespace ascfuse::pipeline
