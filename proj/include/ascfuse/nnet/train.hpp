#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ascfuse/error.hpp"
#include "ascfuse/nnet/loss.hpp"
#include "ascfuse/nnet/network.hpp"
#include "ascfuse/numerics/matrix.hpp"
#include "ascfuse/numerics/rng.hpp"

namespace ascfuse::nnet {

enum class OptimizerKind { adam, sgd_momentum };

inline OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd_momentum" || s == "sgd") return OptimizerKind::sgd_momentum;
    throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd_momentum)");
}

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd_momentum"; }

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::adam;
    double lr = 1e-4;
    double momentum = 0.9;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 256;
    int max_epochs = 500;
    int patience = 30;
    double weight_decay = 1e-4;  // α
    std::uint64_t seed = 0;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
        if (patience < 1 || patience >= max_epochs) throw ConfigError("train: need 1 <= patience < max_epochs");
        if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    }
};

/// Patches with labels. `groups` ties patches to their source segment.
template <class T>
struct PatchSet {
    Shape shape;
    std::vector<T> data;
    std::vector<int> labels;
    std::vector<int> super_labels;
    std::vector<int> groups;

    std::size_t size() const { return labels.size(); }

    PatchSet subset(std::span<const std::size_t> idx) const {
        PatchSet out;
        out.shape = shape;
        const std::size_t ps = shape.size();
        out.data.reserve(idx.size() * ps);
        for (std::size_t i : idx) {
            out.data.insert(out.data.end(), data.begin() + i * ps, data.begin() + (i + 1) * ps);
            out.labels.push_back(labels[i]);
            if (!super_labels.empty()) out.super_labels.push_back(super_labels[i]);
            if (!groups.empty()) out.groups.push_back(groups[i]);
        }
        return out;
    }

    Batch<T> batch(std::size_t begin, std::size_t end) const {
        Batch<T> b;
        b.n = static_cast<int>(end - begin);
        b.shape = shape;
        b.data.assign(data.begin() + begin * shape.size(), data.begin() + end * shape.size());
        return b;
    }
};

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

/// Holds out about `fraction` of each class's groups (whole segments) for
/// validation; every class keeps at least one training group.
inline Split stratified_split(std::span<const int> labels, std::span<const int> groups, double fraction,
                              std::uint64_t seed) {
    if (groups.size() != labels.size()) throw ShapeError("stratified_split: labels and groups differ in length");
    std::map<int, std::vector<int>> class_groups;
    std::map<int, int> group_class;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto [it, inserted] = group_class.emplace(groups[i], labels[i]);
        if (inserted)
            class_groups[labels[i]].push_back(groups[i]);
        else if (it->second != labels[i])
            throw DataError("stratified_split: group " + std::to_string(groups[i]) + " has mixed labels");
    }
    std::map<int, bool> held;
    Rng rng(seed);
    for (auto& [cls, gs] : class_groups) {
        std::sort(gs.begin(), gs.end());
        const auto perm = rng.permutation(gs.size());
        std::size_t k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(gs.size())));
        if (fraction > 0.0 && k == 0 && gs.size() > 1) k = 1;
        if (k >= gs.size()) k = gs.size() - 1;
        for (std::size_t j = 0; j < gs.size(); ++j) held[gs[perm[j]]] = j < k;
    }
    Split s;
    for (std::size_t i = 0; i < labels.size(); ++i) (held[groups[i]] ? s.validation : s.train).push_back(i);
    return s;
}

/// Strict-improvement early stopping on a monitored loss.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}

    /// Returns true when `value` is a new best.
    bool update(double value) {
        if (value < best_) {
            best_ = value;
            bad_ = 0;
            return true;
        }
        ++bad_;
        return false;
    }
    bool should_stop() const { return bad_ >= patience_; }
    double best() const { return best_; }

private:
    int patience_;
    int bad_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainHistory {
    EpochRecord start;  // validation of the starting weights, epoch 0
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    bool early_stopped = false;

    const EpochRecord& best() const {
        return best_epoch == 0 ? start : epochs.at(static_cast<std::size_t>(best_epoch - 1));
    }

    std::string to_csv() const {
        std::string s = "epoch,train_loss,val_loss,val_acc\n";
        char buf[128];
        for (const auto& e : epochs) {
            std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.4f\n", e.epoch, e.train_loss, e.val_loss, e.val_acc);
            s += buf;
        }
        return s;
    }
};

/// Parameter values and BN running statistics.
template <class T>
struct Snapshot {
    std::vector<std::vector<T>> params;
    std::vector<std::vector<T>> running;
};

template <class T>
Snapshot<T> snapshot(const Network<T>& net) {
    Snapshot<T> s;
    for (const auto& p : net.params()) s.params.push_back(p.value);
    for (const auto& l : net.layers()) {
        s.running.push_back(l.running_mean);
        s.running.push_back(l.running_var);
    }
    return s;
}

template <class T>
void restore(Network<T>& net, const Snapshot<T>& s) {
    for (std::size_t i = 0; i < s.params.size(); ++i) net.params()[i].value = s.params[i];
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
        net.layers()[i].running_mean = s.running[2 * i];
        net.layers()[i].running_var = s.running[2 * i + 1];
    }
}

template <class T>
void optimizer_step(Network<T>& net, const TrainConfig& tc) {
    auto& st = net.optimizer();
    auto& params = net.params();
    if (st.first.size() != params.size()) {
        st = {};
        for (const auto& p : params) {
            st.first.emplace_back(p.value.size(), T(0));
            st.second.emplace_back(tc.optimizer == OptimizerKind::adam ? p.value.size() : 0, T(0));
        }
    }
    ++st.step;
    if (tc.optimizer == OptimizerKind::adam) {
        const double b1 = tc.adam_beta1, b2 = tc.adam_beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
        const T step = static_cast<T>(tc.lr * std::sqrt(c2) / c1);
        const T eps = static_cast<T>(tc.adam_eps * std::sqrt(c2));
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& p = params[k];
            auto& m = st.first[k];
            auto& v = st.second[k];
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const T g = p.grad[i];
                m[i] = static_cast<T>(b1) * m[i] + static_cast<T>(1 - b1) * g;
                v[i] = static_cast<T>(b2) * v[i] + static_cast<T>(1 - b2) * g * g;
                p.value[i] -= step * m[i] / (std::sqrt(v[i]) + eps);
            }
        }
    } else {
        const T mu = static_cast<T>(tc.momentum), lr = static_cast<T>(tc.lr);
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& p = params[k];
            auto& vel = st.first[k];
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                vel[i] = mu * vel[i] - lr * p.grad[i];
                p.value[i] += vel[i];
            }
        }
    }
}

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<int> predictions;
};

inline constexpr std::size_t kEvalChunk = 64;

/// Eval-mode loss and patch accuracy over a whole set.
template <class T>
EvalResult evaluate(Network<T>& net, const PatchSet<T>& set, const LossSpec& spec) {
    EvalResult r;
    if (set.size() == 0) return r;
    double loss = 0.0, reg = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < set.size(); b += kEvalChunk) {
        const std::size_t e = std::min(set.size(), b + kEvalChunk);
        const auto fr = net.forward(set.batch(b, e), {Mode::eval, nullptr, false});
        const std::span<const int> y(set.labels.data() + b, e - b);
        std::span<const int> ys;
        if (!set.super_labels.empty()) ys = std::span<const int>(set.super_labels.data() + b, e - b);
        const auto lv = evaluate_loss(net, fr, y, ys, spec, false);
        loss += lv.data * static_cast<double>(e - b);
        reg = lv.reg;
        const std::size_t C = net.num_classes();
        for (std::size_t i = 0; i < e - b; ++i) {
            const int pred = static_cast<int>(argmax(std::span<const T>(fr.logits.data() + i * C, C)));
            r.predictions.push_back(pred);
            correct += pred == y[i];
        }
    }
    r.loss = loss / static_cast<double>(set.size()) + reg;
    r.accuracy = static_cast<double>(correct) / static_cast<double>(set.size());
    return r;
}

/// Replaces the BN running statistics with the average batch statistics over
/// `set`, drawn in a seeded shuffled order without dropout. Momentum estimates
/// from the last few training batches are noisy enough to move validation loss
/// between epochs.
template <class T>
void recalibrate_batchnorm(Network<T>& net, const PatchSet<T>& set, std::size_t batch_size, std::uint64_t seed) {
    const std::size_t n = set.size(), ps = set.shape.size();
    Rng rng(seed);
    const auto order = rng.permutation(n);
    std::size_t k = 0;
    for (std::size_t b = 0; b < n; b += batch_size) {
        const std::size_t e = std::min(n, b + batch_size);
        if (e - b < 2) break;
        Batch<T> batch;
        batch.n = static_cast<int>(e - b);
        batch.shape = set.shape;
        batch.data.resize((e - b) * ps);
        for (std::size_t i = b; i < e; ++i)
            std::copy_n(set.data.begin() + order[i] * ps, ps, batch.data.begin() + (i - b) * ps);
        ForwardOptions opt;
        opt.mode = Mode::train;
        opt.keep_cache = false;
        opt.dropout = false;
        opt.bn_average = ++k;
        net.forward(batch, opt);
    }
}

/// Mini-batch training with early stopping on validation loss. Leaves the
/// network in its best-validation-loss state; the starting weights compete as
/// epoch 0, so fine-tuning never ends worse on validation than it began.
template <class T>
TrainHistory train(Network<T>& net, const PatchSet<T>& train_set, const PatchSet<T>& val_set, const TrainConfig& tc,
                   const LossSpec& spec) {
    tc.validate();
    if (train_set.size() == 0) throw DataError("train: empty training set");
    if (val_set.size() == 0) throw DataError("train: empty validation set");
    std::vector<int> per_class(net.num_classes(), 0);
    for (int y : train_set.labels) {
        if (y < 0 || y >= net.num_classes()) throw DataError("train: label out of range");
        ++per_class[y];
    }
    for (int c = 0; c < net.num_classes(); ++c)
        if (per_class[c] == 0) throw DataError("train: class " + std::to_string(c) + " has no training samples");
    const bool multitask = spec.kind == LossSpec::Kind::multitask;
    if (multitask && (train_set.super_labels.size() != train_set.size() || val_set.super_labels.size() != val_set.size()))
        throw DataError("train: multitask loss needs super-class labels");

    TrainHistory hist;
    EarlyStopper stopper(tc.patience);
    const std::size_t bs = static_cast<std::size_t>(tc.batch_size);
    const std::uint64_t calib_seed = Rng::derive(tc.seed, 0xBA7C4).next_u64();
    recalibrate_batchnorm(net, train_set, bs, calib_seed);
    Snapshot<T> best = snapshot(net);
    {
        const auto ev = evaluate(net, val_set, spec);
        hist.start = {0, 0.0, ev.loss, ev.accuracy};
        stopper.update(ev.loss);
    }
    const std::size_t n = train_set.size();
    const std::size_t ps = train_set.shape.size();
    for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        Rng order_rng = Rng::derive(tc.seed, static_cast<std::uint64_t>(epoch));
        Rng dropout_rng = Rng::derive(tc.seed ^ 0x9E3779B97F4A7C15ULL, static_cast<std::uint64_t>(epoch));
        const auto perm = order_rng.permutation(n);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t b = 0; b < n; b += bs) {
            const std::size_t e = std::min(n, b + bs);
            // A lone trailing sample would give degenerate batch statistics.
            if (e - b < 2 && n >= 2) break;
            Batch<T> batch;
            batch.n = static_cast<int>(e - b);
            batch.shape = train_set.shape;
            batch.data.resize((e - b) * ps);
            std::vector<int> y(e - b), ys(multitask ? e - b : 0);
            for (std::size_t i = b; i < e; ++i) {
                const std::size_t src = perm[i];
                std::copy_n(train_set.data.begin() + src * ps, ps, batch.data.begin() + (i - b) * ps);
                y[i - b] = train_set.labels[src];
                if (multitask) ys[i - b] = train_set.super_labels[src];
            }
            net.zero_grad();
            const auto fr = net.forward(batch, {Mode::train, &dropout_rng, true});
            const auto lv = evaluate_loss(net, fr, y, ys, spec, true);
            if (!std::isfinite(lv.total)) throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
            optimizer_step(net, tc);
            loss_sum += lv.total * static_cast<double>(e - b);
            seen += e - b;
        }
        recalibrate_batchnorm(net, train_set, bs, calib_seed);
        const auto ev = evaluate(net, val_set, spec);
        hist.epochs.push_back({epoch, seen ? loss_sum / static_cast<double>(seen) : 0.0, ev.loss, ev.accuracy});
        if (stopper.update(ev.loss)) {
            best = snapshot(net);
            hist.best_epoch = epoch;
        }
        if (stopper.should_stop()) {
            hist.early_stopped = true;
            break;
        }
    }
    restore(net, best);
    return hist;
}

/// Eval-mode softmax probabilities, one row per patch.
template <class T>
Matrix predict_proba(Network<T>& net, const PatchSet<T>& set) {
    const std::size_t C = net.num_classes();
    Matrix out(set.size(), C);
    for (std::size_t b = 0; b < set.size(); b += kEvalChunk) {
        const std::size_t e = std::min(set.size(), b + kEvalChunk);
        const auto fr = net.forward(set.batch(b, e), {Mode::eval, nullptr, false});
        const auto p = softmax_rows<T>(fr.logits, C);
        for (std::size_t i = 0; i < e - b; ++i)
            for (std::size_t j = 0; j < C; ++j) out(b + i, j) = p[i * C + j];
    }
    return out;
}

/// Argmax class per patch; ties resolve to the lowest index.
template <class T>
std::vector<int> predict(Network<T>& net, const PatchSet<T>& set) {
    const Matrix p = predict_proba(net, set);
    std::vector<int> out(p.rows());
    for (std::size_t i = 0; i < p.rows(); ++i) out[i] = static_cast<int>(argmax(p.row(i)));
    return out;
}

/// Activations feeding the output layer, one row of length L per patch.
template <class T>
Matrix extract_deep_features(Network<T>& net, const PatchSet<T>& set) {
    const std::size_t L = net.feature_length();
    Matrix out(set.size(), L);
    for (std::size_t b = 0; b < set.size(); b += kEvalChunk) {
        const std::size_t e = std::min(set.size(), b + kEvalChunk);
        const auto fr = net.forward(set.batch(b, e), {Mode::eval, nullptr, false});
        for (std::size_t i = 0; i < (e - b) * L; ++i) out.data()[b * L + i] = fr.features[i];
    }
    return out;
}

}  // namespace ascfuse::nnet
