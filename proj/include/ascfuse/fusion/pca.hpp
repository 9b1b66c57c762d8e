#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ascfuse/error.hpp"
#include "ascfuse/numerics/linalg.hpp"
#include "ascfuse/numerics/matrix.hpp"

namespace ascfuse::fusion {

/// Rows that belong to the training partition. PCA can only be fitted on
/// this type, so test rows have to be wrapped deliberately to leak.
struct TrainingRows {
    Matrix rows;
    std::vector<std::string> segment_ids;
};

struct PcaModel {
    std::vector<double> mean;
    Matrix components;              // k × d, orthonormal rows
    std::vector<double> explained;  // ratio per retained component
    std::vector<double> all_ratios; // ratio for every singular direction
    double threshold = 0.99;

    bool fitted() const { return components.rows() > 0; }
    std::size_t input_dim() const { return mean.size(); }
    std::size_t output_dim() const { return components.rows(); }
};

/// Center, take the thin SVD, keep the smallest k whose cumulative explained
/// variance reaches the threshold.
inline PcaModel pca_fit(const TrainingRows& train, double threshold = 0.99) {
    const Matrix& x = train.rows;
    if (x.rows() < 2) throw ConfigError("pca_fit: need at least 2 training vectors");
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("pca_fit: threshold must be in (0, 1]");
    if (!x.all_finite()) throw NumericError("pca_fit: non-finite input");
    const std::size_t n = x.rows(), d = x.cols();
    PcaModel m;
    m.threshold = threshold;
    m.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) m.mean[j] += x(i, j);
    for (double& v : m.mean) v /= static_cast<double>(n);
    Matrix c(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) c(i, j) = x(i, j) - m.mean[j];

    const auto svd = svd_thin(c);
    double total = 0.0;
    for (double s : svd.s) total += s * s;
    m.all_ratios.resize(svd.s.size(), 0.0);
    std::size_t k = 1;
    if (total > 0.0) {
        for (std::size_t i = 0; i < svd.s.size(); ++i) m.all_ratios[i] = svd.s[i] * svd.s[i] / total;
        double cum = 0.0;
        k = 0;
        while (k < svd.s.size()) {
            cum += m.all_ratios[k++];
            if (cum >= threshold - 1e-12) break;
        }
    }
    m.components = Matrix(k, d);
    for (std::size_t r = 0; r < k; ++r)
        for (std::size_t j = 0; j < d; ++j) m.components(r, j) = svd.vt(r, j);
    m.explained.assign(m.all_ratios.begin(), m.all_ratios.begin() + static_cast<std::ptrdiff_t>(k));
    return m;
}

inline std::vector<double> pca_transform(const PcaModel& m, std::span<const double> x) {
    if (!m.fitted()) throw ConfigError("pca_transform: model is not fitted");
    if (x.size() != m.input_dim())
        throw ShapeError("pca_transform: expected length " + std::to_string(m.input_dim()) + ", got " +
                         std::to_string(x.size()));
    std::vector<double> out(m.output_dim(), 0.0);
    for (std::size_t r = 0; r < m.output_dim(); ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) s += m.components(r, j) * (x[j] - m.mean[j]);
        out[r] = s;
    }
    return out;
}

inline Matrix pca_transform(const PcaModel& m, const Matrix& x) {
    Matrix out(x.rows(), m.output_dim());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto g = pca_transform(m, x.row(i));
        std::copy(g.begin(), g.end(), out.row(i).begin());
    }
    return out;
}

}  // namespace ascfuse::fusion
