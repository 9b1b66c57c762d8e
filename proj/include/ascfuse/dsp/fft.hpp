#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "ascfuse/error.hpp"

namespace ascfuse::dsp {

/// Mixed-radix decimation-in-time FFT for arbitrary n. Prime factors are
/// handled by a direct DFT butterfly, so cost is O(n · Σ factors).
class FftPlan {
public:
    explicit FftPlan(std::size_t n) : n_(n), twiddle_(n), scratch_(n) {
        if (n == 0) throw ConfigError("FftPlan: n must be >= 1");
        for (std::size_t j = 0; j < n; ++j) {
            const double a = -2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
            twiddle_[j] = {std::cos(a), std::sin(a)};
        }
    }

    std::size_t size() const { return n_; }

    void forward(std::span<const std::complex<double>> in, std::span<std::complex<double>> out) {
        if (in.size() != n_ || out.size() != n_) throw ShapeError("FftPlan::forward: size mismatch");
        recurse(in.data(), 1, n_, out.data());
    }

    /// Real input convenience; returns all n bins.
    std::vector<std::complex<double>> forward_real(std::span<const double> in) {
        if (in.size() != n_) throw ShapeError("FftPlan::forward_real: size mismatch");
        std::vector<std::complex<double>> x(in.begin(), in.end()), y(n_);
        forward(x, y);
        return y;
    }

private:
    static std::size_t smallest_factor(std::size_t n) {
        if (n % 2 == 0) return 2;
        for (std::size_t f = 3; f * f <= n; f += 2)
            if (n % f == 0) return f;
        return n;
    }

    void recurse(const std::complex<double>* in, std::size_t stride, std::size_t n, std::complex<double>* out) {
        if (n == 1) {
            out[0] = in[0];
            return;
        }
        const std::size_t p = smallest_factor(n);
        const std::size_t m = n / p;
        for (std::size_t r = 0; r < p; ++r) recurse(in + r * stride, stride * p, m, out + r * m);

        // Twiddle step: index into the full-size table with step n_/n.
        const std::size_t step = n_ / n;
        std::complex<double>* tmp = scratch_.data();
        for (std::size_t k = 0; k < m; ++k) {
            for (std::size_t q = 0; q < p; ++q) {
                const std::size_t idx = q * m + k;
                std::complex<double> acc = out[k];
                for (std::size_t r = 1; r < p; ++r) acc += out[r * m + k] * twiddle_[((r * idx) % n) * step];
                tmp[idx] = acc;
            }
        }
        for (std::size_t i = 0; i < n; ++i) out[i] = tmp[i];
    }

    std::size_t n_;
    std::vector<std::complex<double>> twiddle_;
    std::vector<std::complex<double>> scratch_;
};

}  // namespace ascfuse::dsp
