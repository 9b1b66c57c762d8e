#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ascfuse/dsp/spectrogram.hpp"
#include "ascfuse/error.hpp"
#include "ascfuse/numerics/matrix.hpp"
#include "ascfuse/numerics/tensor_io.hpp"

namespace ascfuse::dsp {

inline constexpr std::size_t kPatchSize = 143;

struct Patch {
    Matrix pixels;
    std::string source_segment;
    std::size_t order_index = 0;
    SpecKind kind = SpecKind::stft;
};

/// Bilinear resize with half-pixel centers (identity when sizes match).
inline Matrix resize_bilinear(const Matrix& src, std::size_t out_rows, std::size_t out_cols) {
    if (src.empty() || out_rows == 0 || out_cols == 0) throw ShapeError("resize_bilinear: empty input or output");
    Matrix out(out_rows, out_cols);
    const double sy = static_cast<double>(src.rows()) / static_cast<double>(out_rows);
    const double sx = static_cast<double>(src.cols()) / static_cast<double>(out_cols);
    auto coord = [](double pos, std::size_t n, std::size_t& i0, std::size_t& i1, double& frac) {
        pos = std::clamp(pos, 0.0, static_cast<double>(n - 1));
        i0 = static_cast<std::size_t>(pos);
        i1 = std::min(i0 + 1, n - 1);
        frac = pos - static_cast<double>(i0);
    };
    for (std::size_t r = 0; r < out_rows; ++r) {
        std::size_t y0, y1;
        double fy;
        coord((static_cast<double>(r) + 0.5) * sy - 0.5, src.rows(), y0, y1, fy);
        for (std::size_t c = 0; c < out_cols; ++c) {
            std::size_t x0, x1;
            double fx;
            coord((static_cast<double>(c) + 0.5) * sx - 0.5, src.cols(), x0, x1, fx);
            const double top = src(y0, x0) * (1 - fx) + src(y0, x1) * fx;
            const double bot = src(y1, x0) * (1 - fx) + src(y1, x1) * fx;
            out(r, c) = top * (1 - fy) + bot * fy;
        }
    }
    return out;
}

inline std::size_t patch_count(std::size_t cols, std::size_t width, std::size_t shift) {
    if (cols < width) return 0;
    return (cols - width) / shift + 1;
}

/// Windows of `width` frames every `shift` frames, in temporal order, each
/// resized to out_size × out_size.
inline std::vector<Patch> split_patches(const Spectrogram& spec, std::size_t width, std::size_t shift,
                                        std::size_t out_size = kPatchSize, const std::string& segment_id = {}) {
    if (width == 0 || shift == 0) throw ConfigError("split_patches: width and shift must be >= 1");
    const std::size_t cols = spec.values.cols();
    if (cols < width)
        throw DataError("split_patches: spectrogram has " + std::to_string(cols) + " frames but patch width is " +
                        std::to_string(width) + "; use a width of at most " + std::to_string(cols));
    const std::size_t m = patch_count(cols, width, shift);
    const std::size_t rows = spec.values.rows();
    std::vector<Patch> out;
    out.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        Matrix window(rows, width);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < width; ++c) window(r, c) = spec.values(r, i * shift + c);
        out.push_back({resize_bilinear(window, out_size, out_size), segment_id, i, spec.kind});
    }
    return out;
}

/// Stack patches into a rank-3 m × h × w f32 tensor.
inline Tensor patches_to_tensor(const std::vector<Patch>& patches) {
    if (patches.empty()) throw ShapeError("patches_to_tensor: no patches");
    const std::size_t h = patches[0].pixels.rows(), w = patches[0].pixels.cols();
    Tensor t;
    t.dtype = DType::f32;
    t.dims = {static_cast<std::uint32_t>(patches.size()), static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w)};
    t.values.reserve(patches.size() * h * w);
    for (const auto& p : patches) {
        if (p.pixels.rows() != h || p.pixels.cols() != w) throw ShapeError("patches_to_tensor: ragged patches");
        for (double v : p.pixels.data()) t.values.push_back(static_cast<float>(v));
    }
    return t;
}

}  // namespace ascfuse::dsp
