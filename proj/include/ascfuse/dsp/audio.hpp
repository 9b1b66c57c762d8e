#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ascfuse/error.hpp"

namespace ascfuse::dsp {

/// Mono audio; the unit of classification.
struct AudioSegment {
    std::vector<double> samples;
    double sample_rate = 0.0;
    std::string segment_id;
    std::optional<int> scene_label;

    void validate() const {
        if (!(sample_rate > 0.0)) throw DataError("AudioSegment '" + segment_id + "': sample_rate must be > 0");
        if (samples.empty()) throw DataError("AudioSegment '" + segment_id + "': no samples");
        for (double s : samples)
            if (!std::isfinite(s)) throw DataError("AudioSegment '" + segment_id + "': non-finite sample");
    }
};

class UnsupportedFormat : public DataError {
public:
    using DataError::DataError;
};

namespace detail {

inline std::uint32_t rd_u32(const unsigned char* p) {
    return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t rd_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

inline void wr_u32(std::vector<char>& o, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) o.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void wr_u16(std::vector<char>& o, std::uint16_t v) {
    o.push_back(static_cast<char>(v & 0xFF));
    o.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

/// RIFF/WAVE PCM16 decoder. Stereo is averaged to mono; samples scale by 1/32768.
inline AudioSegment decode_wav(const std::vector<char>& bytes, const std::string& id = {}) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t n = bytes.size();
    if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
        throw UnsupportedFormat("not a RIFF/WAVE file: " + id);

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;
    std::size_t pos = 12;
    while (pos + 8 <= n) {
        const unsigned char* chunk = p + pos;
        const std::uint32_t len = detail::rd_u32(chunk + 4);
        const std::size_t body = pos + 8;
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (len < 16 || body + 16 > n) throw UnsupportedFormat("truncated fmt chunk: " + id);
            format = detail::rd_u16(p + body);
            channels = detail::rd_u16(p + body + 2);
            rate = detail::rd_u32(p + body + 4);
            bits = detail::rd_u16(p + body + 14);
            // WAVE_FORMAT_EXTENSIBLE: the real format tag is the subformat GUID's first word.
            if (format == 0xFFFE && len >= 26 && body + 26 <= n) format = detail::rd_u16(p + body + 24);
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = p + body;
            data_len = std::min<std::size_t>(len, n - body);
        }
        pos = body + len + (len & 1);
    }
    if (format != 1) throw UnsupportedFormat("unsupported WAV codec (format tag " + std::to_string(format) + "): " + id);
    if (bits != 16) throw UnsupportedFormat("unsupported WAV bit depth " + std::to_string(bits) + ": " + id);
    if (channels != 1 && channels != 2)
        throw UnsupportedFormat("unsupported channel count " + std::to_string(channels) + ": " + id);
    if (!data) throw UnsupportedFormat("WAV has no data chunk: " + id);

    AudioSegment seg;
    seg.segment_id = id;
    seg.sample_rate = rate;
    const std::size_t frames = data_len / (2u * channels);
    seg.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            const auto raw = static_cast<std::int16_t>(detail::rd_u16(data + 2 * (i * channels + c)));
            acc += raw / 32768.0;
        }
        seg.samples[i] = acc / channels;
    }
    return seg;
}

inline AudioSegment load_wav(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open WAV: " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_wav(bytes, path.stem().string());
}

/// Mono PCM16 encoder; x maps to round(x·32768) clamped to the int16 range.
inline std::vector<char> encode_wav(const AudioSegment& seg) {
    const auto rate = static_cast<std::uint32_t>(std::lround(seg.sample_rate));
    const auto data_len = static_cast<std::uint32_t>(seg.samples.size() * 2);
    std::vector<char> o;
    o.reserve(44 + data_len);
    o.insert(o.end(), {'R', 'I', 'F', 'F'});
    detail::wr_u32(o, 36 + data_len);
    o.insert(o.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    detail::wr_u32(o, 16);
    detail::wr_u16(o, 1);
    detail::wr_u16(o, 1);
    detail::wr_u32(o, rate);
    detail::wr_u32(o, rate * 2);
    detail::wr_u16(o, 2);
    detail::wr_u16(o, 16);
    o.insert(o.end(), {'d', 'a', 't', 'a'});
    detail::wr_u32(o, data_len);
    for (double s : seg.samples) {
        const double scaled = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
        detail::wr_u16(o, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
    }
    return o;
}

inline void write_wav(const std::filesystem::path& path, const AudioSegment& seg) {
    const auto bytes = encode_wav(seg);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write WAV: " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Linear-interpolation resampling to `target_rate`.
inline AudioSegment resample_linear(const AudioSegment& seg, double target_rate) {
    seg.validate();
    if (!(target_rate > 0.0)) throw ConfigError("resample_linear: target rate must be > 0");
    if (target_rate == seg.sample_rate) return seg;
    const double ratio = seg.sample_rate / target_rate;
    const std::size_t len = seg.samples.size();
    const auto out_len = static_cast<std::size_t>(std::floor((len - 1) / ratio)) + 1;
    AudioSegment out = seg;
    out.sample_rate = target_rate;
    out.samples.resize(out_len);
    for (std::size_t i = 0; i < out_len; ++i) {
        const double t = i * ratio;
        const auto i0 = std::min(static_cast<std::size_t>(t), len - 1);
        const std::size_t i1 = std::min(i0 + 1, len - 1);
        const double frac = t - static_cast<double>(i0);
        out.samples[i] = seg.samples[i0] * (1.0 - frac) + seg.samples[i1] * frac;
    }
    return out;
}

}  // namespace ascfuse::dsp
