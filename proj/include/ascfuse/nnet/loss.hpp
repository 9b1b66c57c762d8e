#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "ascfuse/error.hpp"
#include "ascfuse/nnet/network.hpp"

namespace ascfuse::nnet {

inline constexpr double kProbFloor = 1e-12;

struct LossSpec {
    enum class Kind { basic, multitask };
    Kind kind = Kind::basic;
    double alpha = 1e-4;  // decay on W (basic) / weight of R (multitask)
    double beta = 1e-4;   // decay on W and U (multitask)
    double gamma = 0.6;   // weight of the original-class term
    bool global_decay = false;  // decay every connection weight instead of the output heads only
    std::vector<int> class_to_super;  // s(j), multitask only

    static LossSpec basic(double alpha = 1e-4) {
        LossSpec s;
        s.alpha = alpha;
        return s;
    }
    static LossSpec multitask(std::vector<int> class_to_super, double gamma = 0.6, double alpha = 1e-4,
                              double beta = 1e-4) {
        LossSpec s;
        s.kind = Kind::multitask;
        s.class_to_super = std::move(class_to_super);
        s.gamma = gamma;
        s.alpha = alpha;
        s.beta = beta;
        return s;
    }
};

struct LossValue {
    double total = 0.0;
    double data = 0.0;  // mean negative log-likelihood part
    double reg = 0.0;
};

/// Row-wise softmax of an n × k logit block (max-shifted).
template <class T>
std::vector<T> softmax_rows(std::span<const T> logits, std::size_t k) {
    if (k == 0 || logits.size() % k != 0) throw ShapeError("softmax_rows: logits not a multiple of the class count");
    std::vector<T> p(logits.size());
    for (std::size_t r = 0; r < logits.size() / k; ++r) {
        const T* z = logits.data() + r * k;
        const T m = *std::max_element(z, z + k);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(z[j] - m));
        for (std::size_t j = 0; j < k; ++j) p[r * k + j] = static_cast<T>(std::exp(static_cast<double>(z[j] - m)) / s);
    }
    return p;
}

template <class T>
std::size_t argmax(std::span<const T> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

namespace detail {

/// Σ_i −w·log max(p_i[y_i], floor); writes w·(p − onehot) into grad when given.
/// Clamped entries contribute no gradient.
template <class T>
double weighted_nll(std::span<const T> logits, std::size_t k, std::span<const int> labels, double weight, T* grad) {
    const auto p = softmax_rows(logits, k);
    const std::size_t n = labels.size();
    if (n * k != logits.size()) throw ShapeError("loss: label count does not match logits");
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= k) throw DataError("loss: label " + std::to_string(y) + " out of range");
        const double py = p[i * k + y];
        sum -= weight * std::log(std::max(py, kProbFloor));
        if (grad && py >= kProbFloor)
            for (std::size_t j = 0; j < k; ++j)
                grad[i * k + j] += static_cast<T>(weight * (p[i * k + j] - (static_cast<int>(j) == y ? 1.0 : 0.0)));
    }
    return sum;
}

template <class T>
double sq_norm(const std::vector<T>& v) {
    double s = 0.0;
    for (T x : v) s += static_cast<double>(x) * x;
    return s;
}

/// coef·‖p‖², adding 2·coef·p to its gradient when requested.
template <class T>
double decay(Param<T>& p, double coef, bool backprop) {
    if (coef == 0.0) return 0.0;
    if (backprop)
        for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += static_cast<T>(2.0 * coef * p.value[i]);
    return coef * sq_norm(p.value);
}

}  // namespace detail

/// R = Σ_j ‖W_j − U_{s(j)}‖² over connection weights.
template <class T>
double superclass_regularizer(const Network<T>& net, std::span<const int> class_to_super) {
    const auto& W = net.out_weight().value;
    const auto& U = net.super_weight().value;
    const std::size_t L = net.feature_length();
    double r = 0.0;
    for (std::size_t j = 0; j < class_to_super.size(); ++j) {
        const std::size_t s = static_cast<std::size_t>(class_to_super[j]);
        for (std::size_t i = 0; i < L; ++i) {
            const double d = static_cast<double>(W[j * L + i]) - U[s * L + i];
            r += d * d;
        }
    }
    return r;
}

/// Loss of a forward pass. With backprop, also runs the backward pass and
/// adds the regularizer gradients (the caller zeroes gradients beforehand).
template <class T>
LossValue evaluate_loss(Network<T>& net, const ForwardResult<T>& fr, std::span<const int> labels,
                        std::span<const int> super_labels, const LossSpec& spec, bool backprop) {
    const std::size_t n = static_cast<std::size_t>(fr.batch);
    const std::size_t C = net.num_classes();
    if (labels.size() != n) throw ShapeError("loss: expected " + std::to_string(n) + " labels");
    LossValue out;
    std::vector<T> dlogits(backprop ? n * C : 0, T(0));
    std::vector<T> dsuper;
    const bool multitask = spec.kind == LossSpec::Kind::multitask;
    if (!multitask) {
        out.data = detail::weighted_nll<T>(fr.logits, C, labels, 1.0, backprop ? dlogits.data() : nullptr);
    } else {
        if (!net.has_super_head()) throw ConfigError("multitask loss needs a super-class head");
        const std::size_t N = net.num_superclasses();
        if (super_labels.size() != n) throw ShapeError("loss: expected " + std::to_string(n) + " super-class labels");
        if (spec.class_to_super.size() != C) throw ConfigError("loss: class_to_super must map every class");
        for (int s : spec.class_to_super)
            if (s < 0 || static_cast<std::size_t>(s) >= N) throw ConfigError("loss: class_to_super entry out of range");
        if (backprop) dsuper.assign(n * N, T(0));
        out.data = detail::weighted_nll<T>(fr.logits, C, labels, spec.gamma, backprop ? dlogits.data() : nullptr) +
                   detail::weighted_nll<T>(fr.super_logits, N, super_labels, 1.0 - spec.gamma,
                                           backprop ? dsuper.data() : nullptr);
    }
    out.data /= static_cast<double>(n);
    if (backprop) {
        const T inv_n = static_cast<T>(1.0 / static_cast<double>(n));
        for (T& g : dlogits) g *= inv_n;
        for (T& g : dsuper) g *= inv_n;
        net.backward(fr, dlogits, dsuper);
    }

    const double decay_coef = multitask ? spec.beta : spec.alpha;
    if (spec.global_decay) {
        for (auto& p : net.params())
            if (p.is_weight) out.reg += detail::decay(p, decay_coef, backprop);
    } else {
        out.reg += detail::decay(net.out_weight(), decay_coef, backprop);
        if (multitask) out.reg += detail::decay(net.super_weight(), decay_coef, backprop);
    }
    if (multitask && spec.alpha != 0.0) {
        out.reg += spec.alpha * superclass_regularizer(net, spec.class_to_super);
        if (backprop) {
            auto& W = net.out_weight();
            auto& U = net.super_weight();
            const std::size_t L = net.feature_length();
            for (std::size_t j = 0; j < C; ++j) {
                const std::size_t s = static_cast<std::size_t>(spec.class_to_super[j]);
                for (std::size_t i = 0; i < L; ++i) {
                    const T g = static_cast<T>(2.0 * spec.alpha * (static_cast<double>(W.value[j * L + i]) - U.value[s * L + i]));
                    W.grad[j * L + i] += g;
                    U.grad[s * L + i] -= g;
                }
            }
        }
    }
    out.total = out.data + out.reg;
    return out;
}

}  // namespace ascfuse::nnet
