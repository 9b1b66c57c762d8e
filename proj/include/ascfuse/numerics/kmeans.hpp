#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "ascfuse/error.hpp"
#include "ascfuse/numerics/matrix.hpp"
#include "ascfuse/numerics/rng.hpp"

namespace ascfuse {

struct KMeansResult {
    std::vector<int> assignment;      // one cluster index per point (row)
    Matrix centers;                   // k x dims
    double inertia = 0.0;             // sum of squared distances to assigned centers
    int iterations = 0;
    std::vector<double> inertia_trace;  // inertia after each assignment step
};

struct KMeansOptions {
    int restarts = 10;
    int max_iterations = 300;
};

namespace detail {

inline int nearest_center(std::span<const double> point, const Matrix& centers, double* dist) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centers.rows(); ++c) {
        const double d = squared_distance(point, centers.row(c));
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(c);
        }
    }
    if (dist) *dist = best_d;
    return best;
}

// k-means++ seeding: first center uniform, the rest with probability ∝ D².
inline Matrix kmeanspp_init(const Matrix& points, int k, Rng& rng) {
    const std::size_t n = points.rows(), dims = points.cols();
    Matrix centers(static_cast<std::size_t>(k), dims);
    std::size_t first = rng.below(n);
    for (std::size_t d = 0; d < dims; ++d) centers(0, d) = points(first, d);
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points.row(i), centers.row(0));
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (double v : d2) total += v;
        std::size_t pick = n - 1;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            for (std::size_t i = 0; i < n; ++i) {
                target -= d2[i];
                if (target < 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.below(n);
        }
        for (std::size_t d = 0; d < dims; ++d) centers(c, d) = points(pick, d);
        for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(points.row(i), centers.row(c)));
    }
    return centers;
}

}  // namespace detail

/// One k-means++ / Lloyd run. An empty cluster is re-seeded at the point
/// farthest from its currently assigned center.
inline KMeansResult kmeans_single(const Matrix& points, int k, Rng& rng, int max_iterations = 300) {
    const std::size_t n = points.rows(), dims = points.cols();
    if (k < 1) throw ConfigError("kmeans: k must be >= 1");
    if (static_cast<std::size_t>(k) > n) throw ConfigError("kmeans: k exceeds number of points");

    KMeansResult res;
    res.centers = detail::kmeanspp_init(points, k, rng);
    res.assignment.assign(n, -1);
    std::vector<double> dist(n);

    for (int it = 0; it < max_iterations; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            const int c = detail::nearest_center(points.row(i), res.centers, &dist[i]);
            if (c != res.assignment[i]) {
                res.assignment[i] = c;
                changed = true;
            }
        }
        double inertia = 0.0;
        for (double d : dist) inertia += d;
        res.inertia_trace.push_back(inertia);
        res.iterations = it + 1;
        if (!changed && it > 0) break;

        Matrix sums(static_cast<std::size_t>(k), dims);
        std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(res.assignment[i]);
            ++counts[c];
            for (std::size_t d = 0; d < dims; ++d) sums(c, d) += points(i, d);
        }
        for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
            if (counts[c] == 0) {
                std::size_t far = 0;
                for (std::size_t i = 1; i < n; ++i)
                    if (dist[i] > dist[far]) far = i;
                for (std::size_t d = 0; d < dims; ++d) res.centers(c, d) = points(far, d);
                dist[far] = 0.0;
                continue;
            }
            for (std::size_t d = 0; d < dims; ++d) res.centers(c, d) = sums(c, d) / static_cast<double>(counts[c]);
        }
    }
    res.inertia = res.inertia_trace.empty() ? 0.0 : res.inertia_trace.back();
    return res;
}

/// Best-inertia result over `restarts` runs; ties keep the earliest restart.
inline KMeansResult kmeans(const Matrix& points, int k, Rng& rng, KMeansOptions opt = {}) {
    if (opt.restarts < 1) throw ConfigError("kmeans: restarts must be >= 1");
    KMeansResult best;
    for (int r = 0; r < opt.restarts; ++r) {
        KMeansResult cur = kmeans_single(points, k, rng, opt.max_iterations);
        if (r == 0 || cur.inertia < best.inertia) best = std::move(cur);
    }
    return best;
}

inline KMeansResult kmeans(const Matrix& points, int k, Rng& rng, int restarts) {
    return kmeans(points, k, rng, KMeansOptions{restarts, 300});
}

}  // namespace ascfuse
