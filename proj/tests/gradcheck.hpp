#pragma once

// Central finite-difference gradient check for Network<double>.
//
// A step that flips any ReLU sign or max-pool winner straddles a kink, so the
// step is shrunk until the activation pattern matches the unperturbed pass.
// Entries whose double-precision difference is not conclusive (roundoff of
// the loss dominates tiny gradients) are re-evaluated on an extended-precision
// copy of the network with an independently computed loss.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ascfuse/nnet.hpp"

namespace ascfuse::check {

struct GradCheckResult {
    double max_rel = 0.0;
    std::string worst;
    int checked = 0;
    int shrunk = 0;    // entries that needed a smaller step
    int extended = 0;  // entries re-evaluated in extended precision
};

struct GradCheckInput {
    nnet::Batch<double> x;
    std::vector<int> labels;
    std::vector<int> super_labels;
    nnet::LossSpec spec;
    std::uint64_t dropout_seed = 0;
};

using Ext = long double;

template <class T>
T reference_nll(const std::vector<T>& logits, std::size_t k, const std::vector<int>& labels) {
    T sum = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const T* z = logits.data() + i * k;
        const T m = *std::max_element(z, z + k);
        T s = 0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - m);
        const T p = std::exp(z[labels[i]] - m) / s;
        sum -= std::log(std::max(p, static_cast<T>(nnet::kProbFloor)));
    }
    return sum;
}

template <class T>
T sum_sq(const std::vector<T>& v) {
    T s = 0;
    for (T x : v) s += x * x;
    return s;
}

/// Same objective as evaluate_loss, accumulated in T.
template <class T>
T reference_loss(nnet::Network<T>& net, const nnet::ForwardResult<T>& fr, const GradCheckInput& in) {
    const auto& spec = in.spec;
    const bool multitask = spec.kind == nnet::LossSpec::Kind::multitask;
    const T n = static_cast<T>(fr.batch);
    T data;
    if (multitask) {
        data = static_cast<T>(spec.gamma) * reference_nll(fr.logits, net.num_classes(), in.labels) +
               (1 - static_cast<T>(spec.gamma)) *
                   reference_nll(fr.super_logits, static_cast<std::size_t>(net.num_superclasses()), in.super_labels);
    } else {
        data = reference_nll(fr.logits, net.num_classes(), in.labels);
    }
    const T coef = static_cast<T>(multitask ? spec.beta : spec.alpha);
    T reg = 0;
    if (spec.global_decay) {
        for (const auto& p : net.params())
            if (p.is_weight) reg += coef * sum_sq(p.value);
    } else {
        reg += coef * sum_sq(net.out_weight().value);
        if (multitask) reg += coef * sum_sq(net.super_weight().value);
    }
    if (multitask) {
        const auto& W = net.out_weight().value;
        const auto& U = net.super_weight().value;
        const std::size_t L = net.feature_length();
        T r = 0;
        for (std::size_t j = 0; j < spec.class_to_super.size(); ++j)
            for (std::size_t i = 0; i < L; ++i) {
                const T d = W[j * L + i] - U[static_cast<std::size_t>(spec.class_to_super[j]) * L + i];
                r += d * d;
            }
        reg += static_cast<T>(spec.alpha) * r;
    }
    return data / n + reg;
}

template <class T>
struct Probe {
    T loss = 0;
    std::vector<unsigned char> active;
    std::vector<std::uint32_t> winners;

    bool same_pattern(const Probe& o) const { return active == o.active && winners == o.winners; }
};

template <class T>
Probe<T> probe(nnet::Network<T>& net, const nnet::Batch<T>& x, const GradCheckInput& in, bool reference) {
    Rng r(in.dropout_seed);
    const auto fr = net.forward(x, {nnet::Mode::train, &r, true});
    Probe<T> p;
    p.loss = reference ? reference_loss(net, fr, in)
                       : static_cast<T>(nnet::evaluate_loss(net, fr, in.labels, in.super_labels, in.spec, false).total);
    for (const auto& c : fr.cache) {
        for (const T& v : c.activated) p.active.push_back(v > T(0));
        p.winners.insert(p.winners.end(), c.argmax.begin(), c.argmax.end());
    }
    return p;
}

inline double loss_at(nnet::Network<double>& net, const GradCheckInput& in) { return probe(net, in.x, in, false).loss; }

/// Kink-free central difference of entry i of parameter k.
template <class T>
T central_difference(nnet::Network<T>& net, const nnet::Batch<T>& x, const GradCheckInput& in, bool reference,
                     const Probe<T>& base, std::size_t k, std::size_t i, double h, int& shrunk) {
    T& v = net.params()[k].value[i];
    const T saved = v;
    T step = static_cast<T>(h), num = 0;
    for (int attempt = 0;; ++attempt) {
        v = saved + step;
        const auto up = probe(net, x, in, reference);
        v = saved - step;
        const auto down = probe(net, x, in, reference);
        v = saved;
        num = (up.loss - down.loss) / (2 * step);
        if ((up.same_pattern(base) && down.same_pattern(base)) || attempt == 5) break;
        step /= 10;
        shrunk += attempt == 0;
    }
    return num;
}

/// Compares `samples` randomly chosen entries of every parameter tensor.
/// Relative error is |a − n| / max(|a|, |n|, floor).
inline GradCheckResult grad_check(nnet::Network<double>& net, const GradCheckInput& in, Rng& pick, int samples,
                                  double h = 1e-6, double floor = 1e-7) {
    net.zero_grad();
    {
        Rng r(in.dropout_seed);
        const auto fr = net.forward(in.x, {nnet::Mode::train, &r, true});
        nnet::evaluate_loss(net, fr, in.labels, in.super_labels, in.spec, true);
    }
    const auto base = probe(net, in.x, in, false);

    std::optional<nnet::Network<Ext>> ext;
    nnet::Batch<Ext> ext_x;
    Probe<Ext> ext_base;
    auto extended = [&](std::size_t k, std::size_t i, int& shrunk) {
        if (!ext) {
            Rng unused(0);
            ext = nnet::Network<Ext>::build(net.config(), unused);
            for (std::size_t q = 0; q < net.params().size(); ++q)
                ext->params()[q].value.assign(net.params()[q].value.begin(), net.params()[q].value.end());
            ext_x.n = in.x.n;
            ext_x.shape = in.x.shape;
            ext_x.data.assign(in.x.data.begin(), in.x.data.end());
            ext_base = probe(*ext, ext_x, in, true);
        }
        return static_cast<double>(central_difference(*ext, ext_x, in, true, ext_base, k, i, h, shrunk));
    };

    GradCheckResult res;
    for (std::size_t k = 0; k < net.params().size(); ++k) {
        const std::size_t size = net.params()[k].value.size();
        std::vector<std::size_t> idx;
        if (size <= static_cast<std::size_t>(samples)) {
            for (std::size_t i = 0; i < size; ++i) idx.push_back(i);
        } else {
            for (int s = 0; s < samples; ++s) idx.push_back(pick.below(size));
        }
        for (std::size_t i : idx) {
            const double a = net.params()[k].grad[i];
            auto rel_to = [&](double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}); };
            double n = central_difference(net, in.x, in, false, base, k, i, h, res.shrunk);
            double rel = rel_to(n);
            if (rel > 1e-7) {
                n = extended(k, i, res.shrunk);
                rel = rel_to(n);
                ++res.extended;
            }
            ++res.checked;
            if (rel > res.max_rel) {
                res.max_rel = rel;
                res.worst = net.params()[k].name + "[" + std::to_string(i) + "] analytic=" + std::to_string(a) +
                            " numeric=" + std::to_string(n);
            }
        }
    }
    return res;
}

}  // namespace ascfuse::check
