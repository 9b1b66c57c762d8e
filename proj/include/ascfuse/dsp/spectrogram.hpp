#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include "ascfuse/dsp/audio.hpp"
#include "ascfuse/dsp/fft.hpp"
#include "ascfuse/error.hpp"
#include "ascfuse/numerics/matrix.hpp"

namespace ascfuse::dsp {

enum class SpecKind { stft, cqt, mfcc };

inline std::string to_string(SpecKind k) {
    switch (k) {
        case SpecKind::stft: return "stft";
        case SpecKind::cqt: return "cqt";
        case SpecKind::mfcc: return "mfcc";
    }
    return "?";
}

inline std::string display_name(SpecKind k) {
    switch (k) {
        case SpecKind::stft: return "STFT";
        case SpecKind::cqt: return "CQT";
        case SpecKind::mfcc: return "MFCC";
    }
    return "?";
}

inline SpecKind parse_kind(const std::string& s) {
    std::string l = s;
    std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
    if (l == "stft") return SpecKind::stft;
    if (l == "cqt") return SpecKind::cqt;
    if (l == "mfcc") return SpecKind::mfcc;
    throw ConfigError("unknown spectrogram kind '" + s + "' (expected stft, cqt or mfcc)");
}

struct FrameParams {
    std::size_t window = 0;
    std::size_t hop = 0;
};

/// Rows are frequency bins / coefficients, columns are time frames.
struct Spectrogram {
    SpecKind kind = SpecKind::stft;
    Matrix values;
    FrameParams frame;
};

struct StftConfig {
    std::size_t window = 706;
    std::size_t hop = 430;
};

struct CqtConfig {
    double fmin = 32.703;
    int bins_per_octave = 12;
    int n_bins = 84;
    std::size_t hop = 512;
};

struct MfccConfig {
    double frame_ms = 200.0;
    double hop_ms = 100.0;
    int n_mels = 128;
    int n_coeffs = 60;
};

class TooShort : public DataError {
public:
    using DataError::DataError;
};

inline constexpr double kLogFloor = 1e-10;

/// Periodic Hann window.
inline std::vector<double> hann(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

/// Rescale to [0, 1]; a constant matrix maps to all zeros.
inline void normalize_minmax(Matrix& m) {
    if (m.empty()) return;
    const auto [lo, hi] = std::minmax_element(m.data().begin(), m.data().end());
    const double a = *lo, span = *hi - *lo;
    for (double& v : m.data()) v = span > 0.0 ? (v - a) / span : 0.0;
}

inline std::size_t frame_count(std::size_t len, std::size_t window, std::size_t hop) {
    if (len < window) return 0;
    return (len - window) / hop + 1;
}

// ---------------------------------------------------------------- STFT

/// One-sided power |X_k|² of Hann-windowed frames, bins 0..window/2.
inline Matrix stft_power(const AudioSegment& seg, std::size_t window, std::size_t hop) {
    seg.validate();
    if (window < 2 || hop < 1) throw ConfigError("stft: window must be >= 2 and hop >= 1");
    const std::size_t frames = frame_count(seg.samples.size(), window, hop);
    if (frames == 0)
        throw TooShort("stft: segment '" + seg.segment_id + "' has " + std::to_string(seg.samples.size()) +
                       " samples, shorter than one window of " + std::to_string(window));
    const std::size_t bins = window / 2 + 1;
    const auto w = hann(window);
    FftPlan plan(window);
    Matrix out(bins, frames);
    std::vector<std::complex<double>> in(window), spec(window);
    for (std::size_t t = 0; t < frames; ++t) {
        const double* x = seg.samples.data() + t * hop;
        for (std::size_t i = 0; i < window; ++i) in[i] = x[i] * w[i];
        plan.forward(in, spec);
        for (std::size_t k = 0; k < bins; ++k) out(k, t) = std::norm(spec[k]);
    }
    return out;
}

/// 20·log10(|X| + 1e-10) without normalization.
inline Matrix stft_log_magnitude(const AudioSegment& seg, std::size_t window, std::size_t hop) {
    Matrix m = stft_power(seg, window, hop);
    for (double& v : m.data()) v = 20.0 * std::log10(std::sqrt(v) + kLogFloor);
    return m;
}

inline Spectrogram stft_spectrogram(const AudioSegment& seg, const StftConfig& cfg = {}) {
    Spectrogram s{SpecKind::stft, stft_log_magnitude(seg, cfg.window, cfg.hop), {cfg.window, cfg.hop}};
    normalize_minmax(s.values);
    return s;
}

// ---------------------------------------------------------------- CQT

inline double cqt_q_factor(int bins_per_octave) { return 1.0 / (std::pow(2.0, 1.0 / bins_per_octave) - 1.0); }

inline double cqt_center_frequency(const CqtConfig& cfg, int k) {
    return cfg.fmin * std::pow(2.0, static_cast<double>(k) / cfg.bins_per_octave);
}

/// Per-bin analysis kernels: Hann(N_k) · exp(-2πi·Q·n/N_k) / N_k.
struct CqtKernels {
    std::vector<std::size_t> lengths;
    std::vector<std::vector<double>> re, im;

    CqtKernels(const CqtConfig& cfg, double sample_rate, std::size_t max_len) {
        if (cfg.bins_per_octave < 1 || cfg.n_bins < 1 || cfg.hop < 1 || !(cfg.fmin > 0))
            throw ConfigError("cqt: invalid configuration");
        const double top = cfg.fmin * std::pow(2.0, static_cast<double>(cfg.n_bins) / cfg.bins_per_octave);
        if (!(top < sample_rate / 2.0))
            throw ConfigError("cqt: fmin·2^(n_bins/bins_per_octave) = " + std::to_string(top) +
                              " Hz is not below Nyquist (" + std::to_string(sample_rate / 2.0) + " Hz)");
        const double q = cqt_q_factor(cfg.bins_per_octave);
        for (int k = 0; k < cfg.n_bins; ++k) {
            const double fk = cqt_center_frequency(cfg, k);
            const auto nk = std::min(static_cast<std::size_t>(std::ceil(q * sample_rate / fk)), max_len);
            const auto w = hann(nk);
            std::vector<double> r(nk), i(nk);
            for (std::size_t n = 0; n < nk; ++n) {
                const double a = -2.0 * std::numbers::pi * q * static_cast<double>(n) / static_cast<double>(nk);
                r[n] = w[n] * std::cos(a) / static_cast<double>(nk);
                i[n] = w[n] * std::sin(a) / static_cast<double>(nk);
            }
            lengths.push_back(nk);
            re.push_back(std::move(r));
            im.push_back(std::move(i));
        }
    }
};

/// |X_k(t)| with frame t centered at sample t·hop (zero outside the signal).
inline Matrix cqt_magnitude(const AudioSegment& seg, const CqtConfig& cfg = {}) {
    seg.validate();
    const std::size_t len = seg.samples.size();
    const CqtKernels kern(cfg, seg.sample_rate, len);
    const std::size_t frames = len / cfg.hop + 1;
    Matrix out(static_cast<std::size_t>(cfg.n_bins), frames);
    const auto slen = static_cast<std::ptrdiff_t>(len);
    for (std::size_t k = 0; k < kern.lengths.size(); ++k) {
        const auto nk = static_cast<std::ptrdiff_t>(kern.lengths[k]);
        const double* kr = kern.re[k].data();
        const double* ki = kern.im[k].data();
        for (std::size_t t = 0; t < frames; ++t) {
            const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * cfg.hop) - nk / 2;
            const std::ptrdiff_t n0 = std::max<std::ptrdiff_t>(0, -start);
            const std::ptrdiff_t n1 = std::min<std::ptrdiff_t>(nk, slen - start);
            double sr = 0.0, si = 0.0;
            for (std::ptrdiff_t n = n0; n < n1; ++n) {
                const double x = seg.samples[static_cast<std::size_t>(start + n)];
                sr += x * kr[n];
                si += x * ki[n];
            }
            out(k, t) = std::sqrt(sr * sr + si * si);
        }
    }
    return out;
}

inline Spectrogram cqt_spectrogram(const AudioSegment& seg, const CqtConfig& cfg = {}) {
    Matrix m = cqt_magnitude(seg, cfg);
    for (double& v : m.data()) v = 20.0 * std::log10(v + kLogFloor);
    normalize_minmax(m);
    const double q = cqt_q_factor(cfg.bins_per_octave);
    const auto longest = static_cast<std::size_t>(std::ceil(q * seg.sample_rate / cfg.fmin));
    return {SpecKind::cqt, std::move(m), {std::min(longest, seg.samples.size()), cfg.hop}};
}

// ---------------------------------------------------------------- MFCC

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular HTK-mel filters over 0..sr/2, each scaled by 2/(f_hi - f_lo) so
/// every filter has unit area in Hz.
inline Matrix mel_filterbank(int n_mels, std::size_t n_fft, double sample_rate) {
    const std::size_t bins = n_fft / 2 + 1;
    const double mel_hi = hz_to_mel(sample_rate / 2.0);
    std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(mel_hi * static_cast<double>(i) / static_cast<double>(n_mels + 1));
    Matrix fb(static_cast<std::size_t>(n_mels), bins);
    for (int m = 0; m < n_mels; ++m) {
        const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        const double area = 2.0 / (hi - lo);
        for (std::size_t k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
            double w = 0.0;
            if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
            else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
            fb(static_cast<std::size_t>(m), k) = w * area;
        }
    }
    return fb;
}

/// Orthonormal DCT-II, first n_out coefficients of each column of x.
inline Matrix dct_ii(const Matrix& x, int n_out) {
    const std::size_t n = x.rows();
    Matrix out(static_cast<std::size_t>(n_out), x.cols());
    for (int i = 0; i < n_out; ++i) {
        const double scale = i == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
        for (std::size_t t = 0; t < x.cols(); ++t) {
            double s = 0.0;
            for (std::size_t m = 0; m < n; ++m)
                s += x(m, t) * std::cos(std::numbers::pi * i * (static_cast<double>(m) + 0.5) / static_cast<double>(n));
            out(static_cast<std::size_t>(i), t) = scale * s;
        }
    }
    return out;
}

/// Regression deltas over time (columns), N = 2, edge frames replicated.
inline Matrix deltas(const Matrix& c) {
    const std::size_t frames = c.cols();
    Matrix d(c.rows(), frames);
    const double denom = 2.0 * (1 * 1 + 2 * 2);
    auto at = [&](std::size_t r, std::ptrdiff_t t) {
        t = std::clamp<std::ptrdiff_t>(t, 0, static_cast<std::ptrdiff_t>(frames) - 1);
        return c(r, static_cast<std::size_t>(t));
    };
    for (std::size_t r = 0; r < c.rows(); ++r)
        for (std::size_t t = 0; t < frames; ++t) {
            const auto tt = static_cast<std::ptrdiff_t>(t);
            double s = 0.0;
            for (int k = 1; k <= 2; ++k) s += k * (at(r, tt + k) - at(r, tt - k));
            d(r, t) = s / denom;
        }
    return d;
}

inline FrameParams mfcc_frame_params(const MfccConfig& cfg, double sample_rate) {
    return {static_cast<std::size_t>(std::lround(cfg.frame_ms * sample_rate / 1000.0)),
            static_cast<std::size_t>(std::lround(cfg.hop_ms * sample_rate / 1000.0))};
}

/// Log mel energies (n_mels × frames) before the DCT.
inline Matrix log_mel_energies(const AudioSegment& seg, const MfccConfig& cfg = {}) {
    seg.validate();
    const FrameParams fp = mfcc_frame_params(cfg, seg.sample_rate);
    if (fp.window < 2 || fp.hop < 1) throw ConfigError("mfcc: frame/hop too small for sample rate");
    if (seg.samples.size() < fp.window)
        throw TooShort("mfcc: segment '" + seg.segment_id + "' shorter than one " + std::to_string(cfg.frame_ms) +
                       " ms frame");
    const Matrix power = stft_power(seg, fp.window, fp.hop);
    const Matrix fb = mel_filterbank(cfg.n_mels, fp.window, seg.sample_rate);
    Matrix mel = fb * power;
    for (double& v : mel.data()) v = std::log(v + kLogFloor);
    return mel;
}

/// Raw [static; Δ; ΔΔ] stack, 3·n_coeffs rows.
inline Matrix mfcc_features(const AudioSegment& seg, const MfccConfig& cfg = {}) {
    if (cfg.n_coeffs < 1 || cfg.n_coeffs > cfg.n_mels) throw ConfigError("mfcc: n_coeffs must be in [1, n_mels]");
    const Matrix stat = dct_ii(log_mel_energies(seg, cfg), cfg.n_coeffs);
    const Matrix d1 = deltas(stat);
    const Matrix d2 = deltas(d1);
    const std::size_t nc = stat.rows(), frames = stat.cols();
    Matrix out(3 * nc, frames);
    for (std::size_t r = 0; r < nc; ++r)
        for (std::size_t t = 0; t < frames; ++t) {
            out(r, t) = stat(r, t);
            out(nc + r, t) = d1(r, t);
            out(2 * nc + r, t) = d2(r, t);
        }
    return out;
}

/// MFCC spectrogram; each of the three blocks is min-max normalized on its own
/// so a flat Δ block stays exactly zero.
inline Spectrogram mfcc_spectrogram(const AudioSegment& seg, const MfccConfig& cfg = {}) {
    Matrix raw = mfcc_features(seg, cfg);
    const std::size_t nc = static_cast<std::size_t>(cfg.n_coeffs);
    for (std::size_t b = 0; b < 3; ++b) {
        Matrix block(nc, raw.cols());
        for (std::size_t r = 0; r < nc; ++r)
            for (std::size_t t = 0; t < raw.cols(); ++t) block(r, t) = raw(b * nc + r, t);
        normalize_minmax(block);
        for (std::size_t r = 0; r < nc; ++r)
            for (std::size_t t = 0; t < raw.cols(); ++t) raw(b * nc + r, t) = block(r, t);
    }
    return {SpecKind::mfcc, std::move(raw), mfcc_frame_params(cfg, seg.sample_rate)};
}

}  // namespace ascfuse::dsp
