#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "ascfuse/error.hpp"
#include "ascfuse/numerics/kmeans.hpp"
#include "ascfuse/numerics/linalg.hpp"
#include "ascfuse/numerics/matrix.hpp"
#include "ascfuse/numerics/rng.hpp"

namespace ascfuse::labelexp {

/// F(j, i): samples of true class j predicted as class i.
struct ConfusionMatrix {
    Matrix counts;
    std::string source = "validation";

    std::size_t num_classes() const { return counts.rows(); }
};

/// Disjoint, covering, non-empty class subsets H_1..H_N.
struct Partition {
    std::vector<std::vector<int>> subsets;

    int num_superclasses() const { return static_cast<int>(subsets.size()); }

    /// s(j) for every class j.
    std::vector<int> class_to_super(int num_classes) const {
        validate(num_classes);
        std::vector<int> s(num_classes);
        for (std::size_t m = 0; m < subsets.size(); ++m)
            for (int j : subsets[m]) s[j] = static_cast<int>(m);
        return s;
    }

    void validate(int num_classes) const {
        std::vector<int> seen(num_classes, 0);
        for (const auto& h : subsets) {
            if (h.empty()) throw ConfigError("partition: empty subset");
            for (int j : h) {
                if (j < 0 || j >= num_classes) throw ConfigError("partition: class " + std::to_string(j) + " out of range");
                if (seen[j]++) throw ConfigError("partition: class " + std::to_string(j) + " appears twice");
            }
        }
        for (int j = 0; j < num_classes; ++j)
            if (!seen[j]) throw ConfigError("partition: class " + std::to_string(j) + " not covered");
    }

    /// Members sorted, subsets ordered by smallest member.
    void canonicalize() {
        for (auto& h : subsets) std::sort(h.begin(), h.end());
        std::sort(subsets.begin(), subsets.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
    }

    friend bool operator==(const Partition&, const Partition&) = default;
};

inline ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, int num_classes,
                                        std::string source = "validation") {
    if (truth.size() != predicted.size()) throw ShapeError("confusion_matrix: truth and predictions differ in length");
    ConfusionMatrix f{Matrix(num_classes, num_classes), std::move(source)};
    std::vector<int> present(num_classes, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 || predicted[i] >= num_classes)
            throw DataError("confusion_matrix: label out of range");
        f.counts(truth[i], predicted[i]) += 1.0;
        present[truth[i]] = 1;
    }
    for (int c = 0; c < num_classes; ++c)
        if (!present[c]) throw DataError("confusion_matrix: class " + std::to_string(c) + " absent from the evaluation set");
    return f;
}

/// D = (F + Fᵀ) / 2
inline Matrix symmetrize(const Matrix& f) {
    if (f.rows() != f.cols()) throw ShapeError("symmetrize: matrix must be square");
    Matrix d(f.rows(), f.cols());
    for (std::size_t i = 0; i < f.rows(); ++i)
        for (std::size_t j = 0; j < f.cols(); ++j) {
            if (f(i, j) < 0) throw DataError("symmetrize: negative entry");
            d(i, j) = (f(i, j) + f(j, i)) / 2;
        }
    return d;
}

/// D with its diagonal zeroed.
inline Matrix affinity(const Matrix& d) {
    if (d.rows() != d.cols()) throw ShapeError("affinity: matrix must be square");
    Matrix a = d;
    for (std::size_t i = 0; i < a.rows(); ++i) a(i, i) = 0.0;
    return a;
}

/// L_sym = I − Diag(d)^{-1/2} A Diag(d)^{-1/2}; zero-degree rows use 0 for d^{-1/2}.
inline Matrix normalized_laplacian(const Matrix& a) {
    const std::size_t n = a.rows();
    std::vector<double> inv_sqrt(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double deg = 0.0;
        for (std::size_t j = 0; j < n; ++j) deg += a(i, j);
        if (deg > 0.0) inv_sqrt[i] = 1.0 / std::sqrt(deg);
    }
    Matrix l(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) l(i, j) = (i == j ? 1.0 : 0.0) - inv_sqrt[i] * a(i, j) * inv_sqrt[j];
    return l;
}

/// Eigenvalues of L_sym in ascending order.
inline std::vector<double> laplacian_spectrum(const Matrix& d) {
    auto e = eig_sym(normalized_laplacian(affinity(d)));
    std::reverse(e.values.begin(), e.values.end());
    return e.values;
}

/// N = argmax over k ∈ [2, C−1] of λ_{k+1} − λ_k (1-based, ascending); the
/// smallest k wins ties.
inline int choose_num_superclasses(const Matrix& d) {
    if (d.rows() < 3) throw ConfigError("choose_num_superclasses: need at least 3 classes");
    const auto lam = laplacian_spectrum(d);
    int best = 2;
    double best_gap = -1.0;
    for (std::size_t k = 2; k <= lam.size() - 1; ++k) {
        const double gap = lam[k] - lam[k - 1];
        if (gap > best_gap) {
            best_gap = gap;
            best = static_cast<int>(k);
        }
    }
    return best;
}

struct ClusterOptions {
    int restarts = 10;
    int attempts = 10;  // k-means reruns when a cluster comes back empty
};

/// NJW spectral clustering of the affinity D into N super-classes.
/// Zero-degree classes become singleton subsets before the rest is clustered.
inline Partition spectral_cluster(const Matrix& d, int n_super, Rng& rng, const ClusterOptions& opt = {}) {
    const int C = static_cast<int>(d.rows());
    if (d.rows() != d.cols()) throw ShapeError("spectral_cluster: matrix must be square");
    if (n_super >= C) throw ConfigError("spectral_cluster: N must be smaller than the class count");
    if (n_super < 2) throw ConfigError("spectral_cluster: N must be >= 2");
    for (double v : d.data())
        if (!std::isfinite(v) || v < 0) throw DataError("spectral_cluster: affinity must be finite and non-negative");

    const Matrix a = affinity(d);
    Partition part;
    std::vector<int> connected;
    for (int i = 0; i < C; ++i) {
        double deg = 0.0;
        for (int j = 0; j < C; ++j) deg += a(i, j);
        if (deg > 0.0)
            connected.push_back(i);
        else
            part.subsets.push_back({i});
    }
    const int k = n_super - part.num_superclasses();
    if (k < 0 || (k == 0 && !connected.empty()))
        throw ConfigError("spectral_cluster: " + std::to_string(part.num_superclasses()) +
                          " isolated classes leave no room for the remaining ones with N=" + std::to_string(n_super));
    if (k == 1) {
        part.subsets.push_back(connected);
    } else if (k > 1) {
        const std::size_t r = connected.size();
        Matrix sub(r, r);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < r; ++j) sub(i, j) = a(connected[i], connected[j]);
        const auto eig = eig_sym(normalized_laplacian(sub));
        // Descending order: the k smallest eigenvalues are the last k columns.
        Matrix emb(r, static_cast<std::size_t>(k));
        for (std::size_t i = 0; i < r; ++i) {
            double norm = 0.0;
            for (int c = 0; c < k; ++c) {
                const double v = eig.vectors(i, r - 1 - c);
                emb(i, c) = v;
                norm += v * v;
            }
            if (norm > 0.0)
                for (int c = 0; c < k; ++c) emb(i, c) /= std::sqrt(norm);
        }
        std::vector<int> assign;
        for (int attempt = 0; attempt < opt.attempts; ++attempt) {
            const auto km = kmeans(emb, k, rng, KMeansOptions{opt.restarts, 300});
            std::set<int> used(km.assignment.begin(), km.assignment.end());
            if (static_cast<int>(used.size()) == k) {
                assign = km.assignment;
                break;
            }
        }
        if (assign.empty()) throw NumericError("spectral_cluster: k-means kept producing empty clusters");
        std::vector<std::vector<int>> groups(k);
        for (std::size_t i = 0; i < r; ++i) groups[assign[i]].push_back(connected[i]);
        for (auto& g : groups) part.subsets.push_back(std::move(g));
    }
    part.canonicalize();
    part.validate(C);
    return part;
}

/// Σ_m cut(H_m, H̄_m) / vol(H_m) on the affinity (diagonal ignored).
inline double normalized_cut(const Matrix& d, const Partition& p) {
    const Matrix a = affinity(d);
    const auto s = p.class_to_super(static_cast<int>(d.rows()));
    double total = 0.0;
    for (int m = 0; m < p.num_superclasses(); ++m) {
        double cut = 0.0, vol = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) {
            if (s[i] != m) continue;
            for (std::size_t j = 0; j < a.cols(); ++j) {
                vol += a(i, j);
                if (s[j] != m) cut += a(i, j);
            }
        }
        if (vol > 0.0) total += cut / vol;
    }
    return total;
}

}  // namespace ascfuse::labelexp
