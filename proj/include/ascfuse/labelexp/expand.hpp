#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ascfuse/error.hpp"
#include "ascfuse/labelexp/cluster.hpp"
#include "ascfuse/nnet/loss.hpp"
#include "ascfuse/nnet/network.hpp"
#include "ascfuse/nnet/train.hpp"

namespace ascfuse::labelexp {

/// y^e_i = m such that y^o_i ∈ H_m.
inline std::vector<int> expand_labels(std::span<const int> labels, const Partition& p, int num_classes) {
    const auto s = p.class_to_super(num_classes);
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw DataError("expand_labels: label " + std::to_string(labels[i]) + " outside [0, " +
                            std::to_string(num_classes) + ")");
        out[i] = s[labels[i]];
    }
    return out;
}

/// Adds the N-way head with U_m (and its bias) set to the mean of the member
/// classes' output weights.
template <class T>
void attach_superclass_head(nnet::Network<T>& net, const Partition& p) {
    const int C = net.num_classes();
    p.validate(C);
    const std::size_t L = net.feature_length();
    const int N = p.num_superclasses();
    const auto& W = net.out_weight().value;
    const auto& b = net.out_bias().value;
    std::vector<T> U(static_cast<std::size_t>(N) * L, T(0)), ub(N, T(0));
    for (int m = 0; m < N; ++m) {
        const auto& h = p.subsets[m];
        for (std::size_t i = 0; i < L; ++i) {
            double s = 0.0;
            for (int j : h) s += W[static_cast<std::size_t>(j) * L + i];
            U[m * L + i] = static_cast<T>(s / static_cast<double>(h.size()));
        }
        double sb = 0.0;
        for (int j : h) sb += b[j];
        ub[m] = static_cast<T>(sb / static_cast<double>(h.size()));
    }
    net.attach_super_head(N, std::move(U), std::move(ub));
}

struct LeSettings {
    double gamma = 0.6;
    double alpha = 1e-4;
    double beta = 1e-4;
    bool global_decay = false;
};

inline nnet::LossSpec multitask_spec(const Partition& p, int num_classes, const LeSettings& s) {
    auto spec = nnet::LossSpec::multitask(p.class_to_super(num_classes), s.gamma, s.alpha, s.beta);
    spec.global_decay = s.global_decay;
    return spec;
}

/// Continues training a network that already carries the super-class head.
template <class T>
nnet::TrainHistory finetune_le(nnet::Network<T>& net, const Partition& p, nnet::PatchSet<T> train_set,
                               nnet::PatchSet<T> val_set, const nnet::TrainConfig& tc, const LeSettings& s) {
    if (!net.has_super_head() || net.num_superclasses() != p.num_superclasses())
        throw ConfigError("finetune_le: network head does not match the partition");
    const int C = net.num_classes();
    train_set.super_labels = expand_labels(train_set.labels, p, C);
    val_set.super_labels = expand_labels(val_set.labels, p, C);
    return nnet::train(net, train_set, val_set, tc, multitask_spec(p, C, s));
}

inline nlohmann::json partition_to_json(const Partition& p, const std::string& source_model, std::uint64_t seed) {
    return {{"num_superclasses", p.num_superclasses()},
            {"subsets", p.subsets},
            {"source_model", source_model},
            {"seed", seed}};
}

inline Partition partition_from_json(const nlohmann::json& j) {
    Partition p;
    try {
        p.subsets = j.at("subsets").get<std::vector<std::vector<int>>>();
        if (j.at("num_superclasses").get<int>() != p.num_superclasses())
            throw ConfigError("partition: num_superclasses disagrees with subsets");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("partition: ") + e.what());
    }
    return p;
}

inline std::string confusion_to_csv(const ConfusionMatrix& f) {
    const std::size_t C = f.num_classes();
    std::string s = "true\\predicted";
    for (std::size_t i = 0; i < C; ++i) s += "," + std::to_string(i);
    s += '\n';
    for (std::size_t j = 0; j < C; ++j) {
        s += std::to_string(j);
        for (std::size_t i = 0; i < C; ++i) s += "," + std::to_string(static_cast<long long>(f.counts(j, i)));
        s += '\n';
    }
    return s;
}

}  // namespace ascfuse::labelexp
