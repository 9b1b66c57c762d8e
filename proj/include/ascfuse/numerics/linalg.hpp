#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "ascfuse/error.hpp"
#include "ascfuse/numerics/matrix.hpp"

namespace ascfuse {

struct EigenResult {
    std::vector<double> values;  // descending
    Matrix vectors;              // column i pairs with values[i]
};

struct SvdResult {
    Matrix u;                    // m x r, r = min(m, n)
    std::vector<double> s;       // descending, non-negative
    Matrix vt;                   // r x n
};

inline constexpr std::size_t kMaxEigenSize = 512;

namespace detail {

inline void require_finite(const Matrix& a, const char* who) {
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c)
            if (!std::isfinite(a(r, c))) {
                std::ostringstream os;
                os << who << ": non-finite entry at (" << r << "," << c << ")";
                throw NumericError(os.str());
            }
}

// Make the largest-magnitude component of each column positive.
inline void canonicalize_signs(Matrix& v) {
    for (std::size_t c = 0; c < v.cols(); ++c) {
        std::size_t best = 0;
        for (std::size_t r = 1; r < v.rows(); ++r)
            if (std::abs(v(r, c)) > std::abs(v(best, c)) + 1e-12) best = r;
        if (v(best, c) < 0)
            for (std::size_t r = 0; r < v.rows(); ++r) v(r, c) = -v(r, c);
    }
}

// Modified Gram-Schmidt over the columns of q, in order. Columns that
// collapse are replaced by the first standard basis vector that is not
// already spanned.
inline void orthonormalize_columns(Matrix& q) {
    const std::size_t m = q.rows();
    std::vector<double> v(m);
    auto project_out = [&](std::size_t upto) {
        for (int pass = 0; pass < 2; ++pass)
            for (std::size_t j = 0; j < upto; ++j) {
                double d = 0.0;
                for (std::size_t r = 0; r < m; ++r) d += q(r, j) * v[r];
                for (std::size_t r = 0; r < m; ++r) v[r] -= d * q(r, j);
            }
    };
    auto norm = [&] {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    };
    for (std::size_t c = 0; c < q.cols(); ++c) {
        for (std::size_t r = 0; r < m; ++r) v[r] = q(r, c);
        const double before = norm();
        project_out(c);
        double n = norm();
        if (before == 0.0 || n < 1e-10 * std::max(before, 1.0)) {
            for (std::size_t e = 0; e < m; ++e) {
                std::fill(v.begin(), v.end(), 0.0);
                v[e] = 1.0;
                project_out(c);
                n = norm();
                if (n > 0.5) break;
            }
        }
        for (std::size_t r = 0; r < m; ++r) q(r, c) = v[r] / n;
    }
}

}  // namespace detail

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
inline EigenResult eig_sym(const Matrix& input) {
    if (input.rows() != input.cols()) throw ShapeError("eig_sym: matrix must be square");
    const std::size_t n = input.rows();
    if (n > kMaxEigenSize) throw ConfigError("eig_sym: size exceeds 512");
    detail::require_finite(input, "eig_sym");

    double scale = 1.0;
    for (double v : input.data()) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double diff = std::abs(input(i, j) - input(j, i));
            if (diff > 1e-10 * scale) {
                std::ostringstream os;
                os << "eig_sym: matrix not symmetric: |a(" << i << "," << j << ") - a(" << j << "," << i
                   << ")| = " << diff;
                throw NumericError(os.str());
            }
        }

    Matrix a = input;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (input(i, j) + input(j, i));
    Matrix v = Matrix::identity(n);

    const double total = a.frobenius_norm();
    const double stop = total * 1e-15;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (std::sqrt(off) <= stop || off == 0.0) break;

        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                // Already negligible relative to both diagonal entries.
                if (sweep > 3 && std::abs(apq) < 1e-18 * (std::abs(a(p, p)) + std::abs(a(q, q)))) {
                    a(p, q) = a(q, p) = 0.0;
                    continue;
                }
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

    EigenResult out;
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    for (std::size_t c = 0; c < n; ++c) {
        out.values[c] = a(order[c], order[c]);
        for (std::size_t r = 0; r < n; ++r) out.vectors(r, c) = v(r, order[c]);
    }
    detail::canonicalize_signs(out.vectors);
    return out;
}

/// Thin SVD through the eigendecomposition of the smaller Gram matrix.
/// Singular values are re-measured as ‖A v_i‖ so small ones keep their accuracy.
inline SvdResult svd_thin(const Matrix& a) {
    detail::require_finite(a, "svd_thin");
    const std::size_t m = a.rows(), n = a.cols();
    if (m == 0 || n == 0) throw ShapeError("svd_thin: empty matrix");
    if (m < n) {
        SvdResult t = svd_thin(a.transpose());
        return {t.vt.transpose(), std::move(t.s), t.u.transpose()};
    }

    const EigenResult eig = eig_sym(gram_cols(a));
    Matrix av = a * eig.vectors;  // m x n, column i = A v_i
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
        double ss = 0.0;
        for (std::size_t r = 0; r < m; ++r) ss += av(r, i) * av(r, i);
        s[i] = std::sqrt(ss);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return s[x] > s[y]; });

    SvdResult out;
    out.s.resize(n);
    out.u = Matrix(m, n);
    out.vt = Matrix(n, n);
    const double tiny = (s[order[0]] > 0 ? s[order[0]] : 1.0) * 1e-300;
    for (std::size_t c = 0; c < n; ++c) {
        const std::size_t k = order[c];
        out.s[c] = s[k];
        for (std::size_t r = 0; r < m; ++r) out.u(r, c) = s[k] > tiny ? av(r, k) / s[k] : 0.0;
        for (std::size_t j = 0; j < n; ++j) out.vt(c, j) = eig.vectors(j, k);
    }
    detail::orthonormalize_columns(out.u);
    return out;
}

}  // namespace ascfuse
