#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"

#include "ascfuse/dsp/audio.hpp"
#include "ascfuse/error.hpp"
#include "ascfuse/numerics/rng.hpp"
#include "ascfuse/pipeline/manifest.hpp"

namespace ascfuse::pipeline {

/// Synthetic scene set. Classes come in sibling pairs (2f, 2f+1) that share a
/// chord and noise band and differ only in amplitude-modulation rate; different
/// families sit in different frequency regions.
struct SynthSpec {
    int classes = 4;
    int segments_per_class = 20;
    double duration_s = 3.0;
    double sample_rate = 22050.0;
    int num_folds = 4;
    double label_noise = 0.0;  // fraction of labels flipped to the sibling class
    int clean_fold = 0;        // fold kept free of label noise (-1: none)
    std::uint64_t seed = 0;

    void validate() const {
        if (classes < 2) throw ConfigError("synth: need at least 2 classes, got " + std::to_string(classes));
        if (segments_per_class < 1) throw ConfigError("synth: segments_per_class must be >= 1");
        if (!(sample_rate > 0.0)) throw ConfigError("synth: sample_rate must be > 0");
        if (!(duration_s > 0.0)) throw ConfigError("synth: duration must be > 0");
        if (label_noise < 0.0 || label_noise >= 0.5) throw ConfigError("synth: label_noise must be in [0, 0.5)");
        if (num_folds < 2) throw ConfigError("synth: num_folds must be >= 2");
    }
    std::size_t length() const { return static_cast<std::size_t>(std::llround(duration_s * sample_rate)); }
};

inline json to_json(const SynthSpec& s) {
    return {{"classes", s.classes},       {"segments_per_class", s.segments_per_class},
            {"duration_s", s.duration_s}, {"sample_rate", s.sample_rate},
            {"num_folds", s.num_folds},   {"label_noise", s.label_noise},
            {"clean_fold", s.clean_fold}, {"seed", s.seed}};
}

inline SynthSpec synth_spec_from_json(const json& j) {
    SynthSpec s;
    s.classes = j.value("classes", s.classes);
    s.segments_per_class = j.value("segments_per_class", s.segments_per_class);
    s.duration_s = j.value("duration_s", s.duration_s);
    s.sample_rate = j.value("sample_rate", s.sample_rate);
    s.num_folds = j.value("num_folds", s.num_folds);
    s.label_noise = j.value("label_noise", s.label_noise);
    s.clean_fold = j.value("clean_fold", s.clean_fold);
    s.seed = j.value("seed", s.seed);
    return s;
}

struct ClassRecipe {
    double root_hz;
    double band_hz;
    double am_hz;
};

inline ClassRecipe class_recipe(int c, int classes) {
    const int families = (classes + 1) / 2;
    const double pos = families > 1 ? static_cast<double>(c / 2) / (families - 1) : 0.0;
    const double root = 120.0 * std::pow(12.0, pos);
    return {root, 2.5 * root, c % 2 ? 8.0 : 2.5};
}

inline std::string synth_class_name(int c) {
    return "family" + std::to_string(c / 2) + (c % 2 ? "-fast" : "-slow");
}

namespace detail {

/// RBJ band-pass biquad (0 dB peak), applied in place.
inline void bandpass(std::vector<double>& x, double f0, double q, double fs) {
    const double w0 = 2.0 * std::numbers::pi * f0 / fs;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    const double b0 = alpha / a0, b2 = -alpha / a0;
    const double a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (double& v : x) {
        const double y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = v;
        y2 = y1;
        y1 = y;
        v = y;
    }
}

inline double rms(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s / static_cast<double>(x.size()));
}

}  // namespace detail

/// One segment of class c; all randomness comes from `rng`.
inline dsp::AudioSegment synth_segment(int c, const SynthSpec& spec, Rng& rng) {
    const ClassRecipe r = class_recipe(c, spec.classes);
    const std::size_t n = spec.length();
    const double fs = spec.sample_rate;
    const double root = r.root_hz * (1.0 + rng.uniform(-0.03, 0.03));
    const double band = r.band_hz * (1.0 + rng.uniform(-0.05, 0.05));
    const double am = r.am_hz * (1.0 + rng.uniform(-0.1, 0.1));
    const double depth = rng.uniform(0.7, 0.9);
    const double am_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double tone_w = rng.uniform(0.4, 0.6);
    const double gain = rng.uniform(0.3, 0.8);

    std::vector<double> tone(n, 0.0);
    const double ratios[3] = {1.0, 1.25, 1.5}, amps[3] = {1.0, 0.6, 0.4};
    for (int k = 0; k < 3; ++k) {
        const double f = root * ratios[k];
        if (f >= fs / 2) continue;
        const double ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < n; ++i)
            tone[i] += amps[k] * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / fs + ph);
    }
    std::vector<double> noise(n);
    for (double& v : noise) v = rng.normal();
    const double f0 = std::min(band, 0.45 * fs);
    detail::bandpass(noise, f0, 2.0, fs);
    detail::bandpass(noise, f0, 2.0, fs);

    const double tr = detail::rms(tone), nr = detail::rms(noise);
    dsp::AudioSegment seg;
    seg.sample_rate = fs;
    seg.samples.resize(n);
    double peak = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        const double env = 1.0 - depth * (0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * am * t + am_phase));
        const double mix = tone_w * (tr > 0 ? tone[i] / tr : 0.0) + (1.0 - tone_w) * (nr > 0 ? noise[i] / nr : 0.0);
        seg.samples[i] = env * mix + 0.03 * rng.normal();
        peak = std::max(peak, std::abs(seg.samples[i]));
    }
    for (double& v : seg.samples) v *= gain / peak;
    return seg;
}

/// Writes `<dir>/wav/<id>.wav` for every segment plus `<dir>/manifest.json`.
inline DatasetManifest synth_dataset(const SynthSpec& spec, const fs::path& dir, std::size_t min_samples = 706) {
    spec.validate();
    if (spec.length() < min_samples)
        throw DataError("synth: " + std::to_string(spec.duration_s) + " s at " + std::to_string(spec.sample_rate) +
                        " Hz gives " + std::to_string(spec.length()) + " samples, shorter than one STFT window (" +
                        std::to_string(min_samples) + ")");
    DatasetManifest m;
    for (int c = 0; c < spec.classes; ++c) m.class_names.push_back(synth_class_name(c));
    fs::create_directories(dir / "wav");
    for (int c = 0; c < spec.classes; ++c) {
        for (int j = 0; j < spec.segments_per_class; ++j) {
            char id[64];
            std::snprintf(id, sizeof id, "c%d-%03d", c, j);
            Rng rng = Rng::derive(spec.seed, static_cast<std::uint64_t>(c) * 100003u + static_cast<std::uint64_t>(j));
            auto seg = synth_segment(c, spec, rng);
            seg.segment_id = id;
            const fs::path wav = dir / "wav" / (std::string(id) + ".wav");
            dsp::write_wav(wav, seg);
            m.segments.push_back({id, wav, c, -1});
        }
    }
    assign_folds(m, spec.num_folds, Rng::derive(spec.seed, 0xF01D).next_u64());
    if (spec.label_noise > 0.0) {
        Rng noise_rng = Rng::derive(spec.seed, 0x401CE);
        for (int c = 0; c < spec.classes; ++c) {
            const int sibling = c ^ 1;
            if (sibling >= spec.classes) continue;
            std::vector<std::size_t> eligible;
            for (std::size_t i = 0; i < m.segments.size(); ++i)
                if (m.segments[i].label == c && m.segments[i].fold != spec.clean_fold &&
                    m.segments[i].id.rfind("c" + std::to_string(c) + "-", 0) == 0)
                    eligible.push_back(i);
            const auto perm = noise_rng.permutation(eligible.size());
            const auto flips = static_cast<std::size_t>(std::llround(spec.label_noise * eligible.size()));
            for (std::size_t k = 0; k < flips; ++k) m.segments[eligible[perm[k]]].label = sibling;
        }
    }
    save_manifest(dir / "manifest.json", m);
    return m;
}

}  // namespace ascfuse::pipeline
