#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ascfuse/error.hpp"
#include "ascfuse/numerics/matrix.hpp"
#include "ascfuse/numerics/rng.hpp"

namespace ascfuse::fusion {

struct SvmOptions {
    double c = 1.0;
    double tolerance = 1e-6;  // duality gap
    int max_sweeps = 200000;
    std::uint64_t seed = 0;   // coordinate order
};

/// w·x + b with the bias learned as the weight of a constant-1 feature, so
/// the primal is ½(‖w‖² + b²) + C·Σ max(0, 1 − y(w·x + b)).
struct BinarySvm {
    std::vector<double> w;
    double b = 0.0;
    double primal = 0.0;
    double dual = 0.0;
    int sweeps = 0;
    std::vector<double> dual_trace;  // dual objective after each sweep

    double decision(std::span<const double> x) const {
        double s = b;
        for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * x[j];
        return s;
    }
};

inline double svm_primal(const Matrix& x, std::span<const int> y, std::span<const double> w, double b, double c) {
    double obj = b * b;
    for (double v : w) obj += v * v;
    obj *= 0.5;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double s = b;
        for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * x(i, j);
        obj += c * std::max(0.0, 1.0 - y[i] * s);
    }
    return obj;
}

/// Dual coordinate descent for the L1-loss linear SVM; labels are ±1.
inline BinarySvm svm_train_binary(const Matrix& x, std::span<const int> y, const SvmOptions& opt = {}) {
    const std::size_t n = x.rows(), d = x.cols();
    if (n == 0) throw DataError("svm: empty training set");
    if (y.size() != n) throw ShapeError("svm: label count does not match rows");
    if (!(opt.c > 0.0)) throw ConfigError("svm: C must be > 0");
    if (!x.all_finite()) throw NumericError("svm: non-finite features");
    for (int v : y)
        if (v != 1 && v != -1) throw DataError("svm: binary labels must be +1 or -1");

    BinarySvm m;
    m.w.assign(d, 0.0);
    std::vector<double> alpha(n, 0.0), q(n, 1.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) q[i] += x(i, j) * x(i, j);
    Rng rng(opt.seed);
    double alpha_sum = 0.0;
    auto dual_value = [&] {
        double ww = m.b * m.b;
        for (double v : m.w) ww += v * v;
        return alpha_sum - 0.5 * ww;
    };
    for (int sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
        const auto order = rng.permutation(n);
        for (std::size_t idx : order) {
            const double yi = y[idx];
            const double g = yi * m.decision(x.row(idx)) - 1.0;
            double pg = g;
            if (alpha[idx] <= 0.0)
                pg = std::min(g, 0.0);
            else if (alpha[idx] >= opt.c)
                pg = std::max(g, 0.0);
            if (pg == 0.0) continue;
            const double old = alpha[idx];
            alpha[idx] = std::clamp(old - g / q[idx], 0.0, opt.c);
            const double delta = (alpha[idx] - old) * yi;
            if (delta == 0.0) continue;
            alpha_sum += alpha[idx] - old;
            for (std::size_t j = 0; j < d; ++j) m.w[j] += delta * x(idx, j);
            m.b += delta;
        }
        m.sweeps = sweep;
        m.dual = dual_value();
        m.dual_trace.push_back(m.dual);
        m.primal = svm_primal(x, y, m.w, m.b, opt.c);
        if (m.primal - m.dual <= opt.tolerance) break;
    }
    return m;
}

/// One-vs-rest linear SVM over classes 0..K−1.
struct SvmModel {
    std::vector<BinarySvm> machines;
    double c = 1.0;

    std::size_t num_classes() const { return machines.size(); }
    std::size_t dim() const { return machines.empty() ? 0 : machines.front().w.size(); }

    std::vector<double> decision_values(std::span<const double> x) const {
        if (x.size() != dim())
            throw ShapeError("svm: expected feature length " + std::to_string(dim()) + ", got " + std::to_string(x.size()));
        std::vector<double> v(machines.size());
        for (std::size_t k = 0; k < machines.size(); ++k) v[k] = machines[k].decision(x);
        return v;
    }

    /// Argmax of the decision values; ties go to the lowest class index.
    int predict(std::span<const double> x) const {
        const auto v = decision_values(x);
        return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    }

    std::vector<int> predict(const Matrix& x) const {
        std::vector<int> out(x.rows());
        for (std::size_t i = 0; i < x.rows(); ++i) out[i] = predict(x.row(i));
        return out;
    }
};

inline SvmModel svm_train(const Matrix& x, std::span<const int> labels, int num_classes, const SvmOptions& opt = {}) {
    if (labels.size() != x.rows()) throw ShapeError("svm_train: label count does not match rows");
    std::vector<int> present(std::max(num_classes, 0), 0);
    for (int l : labels) {
        if (l < 0 || l >= num_classes) throw DataError("svm_train: label out of range");
        present[l] = 1;
    }
    int distinct = 0;
    for (int p : present) distinct += p;
    if (distinct < 2) throw DataError("svm_train: need at least 2 classes in the training set");
    SvmModel m;
    m.c = opt.c;
    for (int k = 0; k < num_classes; ++k) {
        std::vector<int> y(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == k ? 1 : -1;
        SvmOptions o = opt;
        o.seed = opt.seed + static_cast<std::uint64_t>(k);
        m.machines.push_back(svm_train_binary(x, y, o));
    }
    return m;
}

}  // namespace ascfuse::fusion
