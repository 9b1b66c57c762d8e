#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "ascfuse/error.hpp"
#include "ascfuse/nnet/config.hpp"
#include "ascfuse/nnet/kernels.hpp"
#include "ascfuse/numerics/rng.hpp"

namespace ascfuse::nnet {

/// Accumulator for reductions: at least double, wider when T is.
template <class T>
using accum_t = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;

enum class Mode { train, eval };

/// A batch of images, N × C × H × W, row-major.
template <class T>
struct Batch {
    int n = 0;
    Shape shape;
    std::vector<T> data;

    std::size_t per_sample() const { return shape.size(); }
    const T* sample(std::size_t i) const { return data.data() + i * per_sample(); }
};

template <class T>
struct Param {
    std::string name;
    std::vector<T> value;
    std::vector<T> grad;
    bool is_weight = false;  // connection weights (subject to decay); false for biases and BN affine terms
};

/// Adam / momentum state, one slot per parameter.
template <class T>
struct OptimizerState {
    std::vector<std::vector<T>> first;
    std::vector<std::vector<T>> second;
    std::int64_t step = 0;
};

template <class T>
struct LayerCache {
    std::vector<T> input;
    std::vector<T> xhat;
    std::vector<T> inv_std;
    std::vector<T> activated;  // post-activation, pre-dropout
    std::vector<T> mask;       // inverted-dropout multipliers; empty when inactive
    std::vector<std::uint32_t> argmax;
};

template <class T>
struct ForwardResult {
    int batch = 0;
    Mode mode = Mode::eval;
    std::vector<T> features;      // batch × L, input of the output layer(s)
    std::vector<T> logits;        // batch × C
    std::vector<T> super_logits;  // batch × N (empty without a super-class head)
    std::vector<LayerCache<T>> cache;
};

struct ForwardOptions {
    Mode mode = Mode::eval;
    Rng* dropout_rng = nullptr;  // required in train mode when any layer has dropout
    bool keep_cache = true;
    bool dropout = true;
    /// Train mode only. When k > 0 the running statistics become the mean of
    /// this batch's statistics and the k − 1 before it, instead of a momentum update.
    std::size_t bn_average = 0;
};

/// Network parameters, BN running statistics and optimizer moments.
template <class T>
class Network {
public:
    struct Layer {
        LayerSpec spec;
        Shape in, out;
        kernels::ConvGeometry geom{};
        int weight = -1, bias = -1, gamma = -1, beta = -1;
        std::vector<T> running_mean, running_var;
    };

    Network() = default;

    /// He-uniform weights (limit √(6/fan_in)), zero biases, BN γ=1 β=0.
    static Network build(const NetworkConfig& cfg, Rng& rng) {
        Network net;
        net.cfg_ = cfg;
        net.trace_ = shape_plan(cfg);
        for (std::size_t i = 0; i + 1 < cfg.layers.size(); ++i) {
            Layer l;
            l.spec = cfg.layers[i];
            l.in = net.trace_[i];
            l.out = net.trace_[i + 1];
            if (l.spec.kind == LayerKind::conv) {
                l.geom = {l.in.c, l.in.h, l.in.w, l.spec.kernel_h, l.spec.kernel_w, l.spec.stride, l.spec.pad,
                          l.out.h, l.out.w};
                const std::size_t fan_in = l.geom.col_rows();
                l.weight = net.add_param(l.spec.name + ".weight", static_cast<std::size_t>(l.out.c) * fan_in, true);
                net.he_uniform(net.params_[l.weight].value, fan_in, rng);
                if (l.spec.batch_norm) {
                    l.gamma = net.add_param(l.spec.name + ".gamma", l.out.c, false, T(1));
                    l.beta = net.add_param(l.spec.name + ".beta", l.out.c, false);
                    l.running_mean.assign(l.out.c, T(0));
                    l.running_var.assign(l.out.c, T(1));
                } else {
                    l.bias = net.add_param(l.spec.name + ".bias", l.out.c, false);
                }
            }
            net.layers_.push_back(std::move(l));
        }
        const LayerSpec& head = cfg.layers.back();
        net.out_weight_ = net.add_param(head.name + ".weight", static_cast<std::size_t>(cfg.num_classes) * net.feature_length(), true);
        net.he_uniform(net.params_[net.out_weight_].value, net.feature_length(), rng);
        net.out_bias_ = net.add_param(head.name + ".bias", cfg.num_classes, false);
        if (cfg.num_superclasses > 0) {
            net.attach_super_head(cfg.num_superclasses, std::vector<T>(static_cast<std::size_t>(cfg.num_superclasses) * net.feature_length()),
                                  std::vector<T>(cfg.num_superclasses));
            net.he_uniform(net.params_[net.super_weight_].value, net.feature_length(), rng);
        }
        return net;
    }

    const NetworkConfig& config() const { return cfg_; }
    const std::vector<Shape>& trace() const { return trace_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }
    std::size_t feature_length() const { return trace_[trace_.size() - 2].size(); }
    int num_classes() const { return cfg_.num_classes; }
    int num_superclasses() const { return super_weight_ >= 0 ? cfg_.num_superclasses : 0; }
    bool has_super_head() const { return super_weight_ >= 0; }

    std::vector<Param<T>>& params() { return params_; }
    const std::vector<Param<T>>& params() const { return params_; }
    OptimizerState<T>& optimizer() { return opt_; }
    const OptimizerState<T>& optimizer() const { return opt_; }

    /// Output layer weights W (C × L) and biases.
    Param<T>& out_weight() { return params_[out_weight_]; }
    const Param<T>& out_weight() const { return params_[out_weight_]; }
    Param<T>& out_bias() { return params_[out_bias_]; }
    const Param<T>& out_bias() const { return params_[out_bias_]; }
    /// Super-class head U (N × L); only valid when has_super_head().
    Param<T>& super_weight() { return params_.at(checked(super_weight_)); }
    const Param<T>& super_weight() const { return params_.at(checked(super_weight_)); }
    Param<T>& super_bias() { return params_.at(checked(super_bias_)); }
    const Param<T>& super_bias() const { return params_.at(checked(super_bias_)); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    /// Adds an N-way softmax head fully connected to the same feature layer.
    void attach_super_head(int n, std::vector<T> weight, std::vector<T> bias) {
        if (n < 1) throw ConfigError("attach_super_head: N must be >= 1");
        if (weight.size() != static_cast<std::size_t>(n) * feature_length() || bias.size() != static_cast<std::size_t>(n))
            throw ShapeError("attach_super_head: U must be N x L");
        cfg_.num_superclasses = n;
        if (super_weight_ < 0) {
            super_weight_ = add_param("super.weight", weight.size(), true);
            super_bias_ = add_param("super.bias", n, false);
        } else {
            params_[super_weight_].value.assign(weight.size(), T(0));
            params_[super_weight_].grad.assign(weight.size(), T(0));
            params_[super_bias_].value.assign(n, T(0));
            params_[super_bias_].grad.assign(n, T(0));
        }
        params_[super_weight_].value = std::move(weight);
        params_[super_bias_].value = std::move(bias);
        opt_ = {};
    }

    void zero_grad() {
        for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
    }

    ForwardResult<T> forward(const Batch<T>& x, const ForwardOptions& opt) {
        if (x.shape != trace_.front())
            throw ShapeError("forward: expected input " + dims(trace_.front()) + ", got " + dims(x.shape));
        if (x.data.size() != static_cast<std::size_t>(x.n) * x.per_sample())
            throw ShapeError("forward: batch data length does not match n x shape");
        ForwardResult<T> res;
        res.batch = x.n;
        res.mode = opt.mode;
        if (opt.keep_cache) res.cache.resize(layers_.size());
        std::vector<T> cur = x.data;
        const std::size_t n = static_cast<std::size_t>(x.n);
        for (std::size_t li = 0; li < layers_.size(); ++li) {
            Layer& l = layers_[li];
            LayerCache<T> scratch;
            LayerCache<T>& c = opt.keep_cache ? res.cache[li] : scratch;
            switch (l.spec.kind) {
                case LayerKind::conv: cur = conv_forward(l, std::move(cur), n, opt, c); break;
                case LayerKind::maxpool: cur = pool_forward(l, std::move(cur), n, opt, c); break;
                case LayerKind::flatten:
                case LayerKind::full: break;
            }
        }
        res.features = std::move(cur);
        res.logits = dense(res.features, n, params_[out_weight_].value, params_[out_bias_].value, cfg_.num_classes);
        if (has_super_head())
            res.super_logits = dense(res.features, n, params_[super_weight_].value, params_[super_bias_].value,
                                     cfg_.num_superclasses);
        return res;
    }

    /// Accumulates parameter gradients for upstream gradients on the logits.
    void backward(const ForwardResult<T>& fr, std::span<const T> dlogits, std::span<const T> dsuper) {
        if (fr.cache.size() != layers_.size()) throw ShapeError("backward: forward result has no cache");
        const std::size_t n = static_cast<std::size_t>(fr.batch);
        const std::size_t L = feature_length();
        const std::size_t C = cfg_.num_classes;
        if (dlogits.size() != n * C) throw ShapeError("backward: dlogits size mismatch");

        std::vector<T> grad(n * L, T(0));
        dense_backward(fr.features, n, dlogits, C, out_weight_, out_bias_, grad);
        if (!dsuper.empty()) {
            if (!has_super_head() || dsuper.size() != n * static_cast<std::size_t>(cfg_.num_superclasses))
                throw ShapeError("backward: dsuper size mismatch");
            dense_backward(fr.features, n, dsuper, cfg_.num_superclasses, super_weight_, super_bias_, grad);
        }
        for (std::size_t li = layers_.size(); li-- > 0;) {
            Layer& l = layers_[li];
            const bool need_input_grad = li > 0;
            switch (l.spec.kind) {
                case LayerKind::conv: grad = conv_backward(l, fr.cache[li], std::move(grad), n, fr.mode, need_input_grad); break;
                case LayerKind::maxpool: grad = pool_backward(l, fr.cache[li], std::move(grad), n); break;
                case LayerKind::flatten:
                case LayerKind::full: break;
            }
        }
    }

private:
    static std::string dims(const Shape& s) {
        return std::to_string(s.c) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
    }

    int checked(int idx) const {
        if (idx < 0) throw ConfigError("network has no super-class head");
        return idx;
    }

    int add_param(std::string name, std::size_t size, bool is_weight, T fill = T(0)) {
        params_.push_back({std::move(name), std::vector<T>(size, fill), std::vector<T>(size, T(0)), is_weight});
        return static_cast<int>(params_.size()) - 1;
    }

    static void he_uniform(std::vector<T>& w, std::size_t fan_in, Rng& rng) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (T& v : w) v = static_cast<T>(rng.uniform(-limit, limit));
    }

    static std::vector<T> dense(const std::vector<T>& x, std::size_t n, const std::vector<T>& w, const std::vector<T>& b,
                                int outs) {
        const std::size_t L = x.size() / n;
        std::vector<T> y(n * outs);
        for (std::size_t i = 0; i < n; ++i)
            for (int o = 0; o < outs; ++o)
                y[i * outs + o] = b[o] + kernels::dot(x.data() + i * L, w.data() + static_cast<std::size_t>(o) * L, L);
        return y;
    }

    void dense_backward(const std::vector<T>& x, std::size_t n, std::span<const T> dy, std::size_t outs, int w_idx,
                        int b_idx, std::vector<T>& dx) {
        const std::size_t L = x.size() / n;
        auto& w = params_[w_idx];
        auto& b = params_[b_idx];
        kernels::gemm_tn(outs, L, n, dy.data(), x.data(), w.grad.data());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t o = 0; o < outs; ++o) b.grad[o] += dy[i * outs + o];
        kernels::gemm_nn(n, L, outs, dy.data(), w.value.data(), dx.data());
    }

    void apply_dropout(const Layer& l, std::vector<T>& y, const ForwardOptions& opt, LayerCache<T>& c) {
        if (opt.mode != Mode::train || !opt.dropout || l.spec.dropout <= 0.0) return;
        if (!opt.dropout_rng) throw ConfigError("forward: train mode with dropout needs a dropout rng");
        const T keep_scale = static_cast<T>(1.0 / (1.0 - l.spec.dropout));
        c.mask.resize(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) {
            c.mask[i] = opt.dropout_rng->uniform() < l.spec.dropout ? T(0) : keep_scale;
            y[i] *= c.mask[i];
        }
    }

    std::vector<T> conv_forward(Layer& l, std::vector<T> in, std::size_t n, const ForwardOptions& opt, LayerCache<T>& c) {
        const auto& g = l.geom;
        const std::size_t K = g.col_rows(), P = g.col_cols(), Cout = l.out.c;
        const std::size_t in_sz = l.in.size(), out_sz = l.out.size();
        std::vector<T> z(n * out_sz, T(0));
        std::vector<T> col(K * P);
        const T* w = params_[l.weight].value.data();
        for (std::size_t i = 0; i < n; ++i) {
            kernels::im2col(g, in.data() + i * in_sz, col.data());
            kernels::gemm_nn(Cout, P, K, w, col.data(), z.data() + i * out_sz);
        }
        if (l.spec.batch_norm) {
            batchnorm_forward(l, z, n, P, opt, c);
        } else {
            const auto& b = params_[l.bias].value;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t ch = 0; ch < Cout; ++ch) {
                    T* zp = z.data() + i * out_sz + ch * P;
                    for (std::size_t p = 0; p < P; ++p) zp[p] += b[ch];
                }
        }
        if (l.spec.activation == Activation::relu)
            for (T& v : z) v = v > T(0) ? v : T(0);
        if (opt.keep_cache) {
            c.input = std::move(in);
            if (l.spec.activation == Activation::relu) c.activated = z;
        }
        apply_dropout(l, z, opt, c);
        return z;
    }

    void batchnorm_forward(Layer& l, std::vector<T>& z, std::size_t n, std::size_t P, const ForwardOptions& opt,
                           LayerCache<T>& c) {
        using Acc = accum_t<T>;
        const std::size_t Cout = l.out.c, out_sz = l.out.size();
        const Acc M = static_cast<Acc>(n * P);
        const auto& gamma = params_[l.gamma].value;
        const auto& beta = params_[l.beta].value;
        c.inv_std.assign(Cout, T(0));
        c.xhat.resize(z.size());
        for (std::size_t ch = 0; ch < Cout; ++ch) {
            Acc mean, var;
            if (opt.mode == Mode::train) {
                Acc s = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    const T* zp = z.data() + i * out_sz + ch * P;
                    for (std::size_t p = 0; p < P; ++p) s += zp[p];
                }
                mean = s / M;
                Acc ss = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    const T* zp = z.data() + i * out_sz + ch * P;
                    for (std::size_t p = 0; p < P; ++p) ss += (zp[p] - mean) * (zp[p] - mean);
                }
                var = ss / M;
                const Acc mom = opt.bn_average > 0 ? Acc(1) - Acc(1) / static_cast<Acc>(opt.bn_average)
                                                   : static_cast<Acc>(cfg_.bn_momentum);
                const Acc unbiased = M > 1 ? var * M / (M - 1) : var;
                l.running_mean[ch] = static_cast<T>(mom * l.running_mean[ch] + (1 - mom) * mean);
                l.running_var[ch] = static_cast<T>(mom * l.running_var[ch] + (1 - mom) * unbiased);
            } else {
                mean = l.running_mean[ch];
                var = l.running_var[ch];
            }
            const T inv = static_cast<T>(Acc(1) / std::sqrt(var + static_cast<Acc>(cfg_.bn_eps)));
            const T mu = static_cast<T>(mean);
            c.inv_std[ch] = inv;
            for (std::size_t i = 0; i < n; ++i) {
                T* zp = z.data() + i * out_sz + ch * P;
                T* xh = c.xhat.data() + i * out_sz + ch * P;
                for (std::size_t p = 0; p < P; ++p) {
                    xh[p] = (zp[p] - mu) * inv;
                    zp[p] = gamma[ch] * xh[p] + beta[ch];
                }
            }
        }
    }

    std::vector<T> conv_backward(Layer& l, const LayerCache<T>& c, std::vector<T> d, std::size_t n, Mode mode,
                                 bool need_input_grad) {
        const auto& g = l.geom;
        const std::size_t K = g.col_rows(), P = g.col_cols(), Cout = l.out.c;
        const std::size_t in_sz = l.in.size(), out_sz = l.out.size();
        if (!c.mask.empty())
            for (std::size_t i = 0; i < d.size(); ++i) d[i] *= c.mask[i];
        if (l.spec.activation == Activation::relu)
            for (std::size_t i = 0; i < d.size(); ++i)
                if (!(c.activated[i] > T(0))) d[i] = T(0);

        if (l.spec.batch_norm) {
            auto& gg = params_[l.gamma];
            auto& gb = params_[l.beta];
            const double M = static_cast<double>(n * P);
            for (std::size_t ch = 0; ch < Cout; ++ch) {
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const T* dp = d.data() + i * out_sz + ch * P;
                    const T* xh = c.xhat.data() + i * out_sz + ch * P;
                    for (std::size_t p = 0; p < P; ++p) {
                        sum_dy += dp[p];
                        sum_dy_xhat += dp[p] * xh[p];
                    }
                }
                gg.grad[ch] += static_cast<T>(sum_dy_xhat);
                gb.grad[ch] += static_cast<T>(sum_dy);
                const T gamma = gg.value[ch];
                const T inv = c.inv_std[ch];
                if (mode == Mode::train) {
                    // dz = γ·inv/M · (M·dy − Σdy − x̂·Σ(dy·x̂))
                    const T a = static_cast<T>(gamma * inv);
                    const T mean_dy = static_cast<T>(sum_dy / M);
                    const T mean_dyx = static_cast<T>(sum_dy_xhat / M);
                    for (std::size_t i = 0; i < n; ++i) {
                        T* dp = d.data() + i * out_sz + ch * P;
                        const T* xh = c.xhat.data() + i * out_sz + ch * P;
                        for (std::size_t p = 0; p < P; ++p) dp[p] = a * (dp[p] - mean_dy - xh[p] * mean_dyx);
                    }
                } else {
                    for (std::size_t i = 0; i < n; ++i) {
                        T* dp = d.data() + i * out_sz + ch * P;
                        for (std::size_t p = 0; p < P; ++p) dp[p] *= gamma * inv;
                    }
                }
            }
        } else {
            auto& gb = params_[l.bias];
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t ch = 0; ch < Cout; ++ch) {
                    const T* dp = d.data() + i * out_sz + ch * P;
                    T s = T(0);
                    for (std::size_t p = 0; p < P; ++p) s += dp[p];
                    gb.grad[ch] += s;
                }
        }

        auto& w = params_[l.weight];
        std::vector<T> col(K * P), dcol(need_input_grad ? K * P : 0);
        std::vector<T> din(need_input_grad ? n * in_sz : 0, T(0));
        for (std::size_t i = 0; i < n; ++i) {
            kernels::im2col(g, c.input.data() + i * in_sz, col.data());
            kernels::gemm_nt(Cout, K, P, d.data() + i * out_sz, col.data(), w.grad.data());
            if (need_input_grad) {
                std::fill(dcol.begin(), dcol.end(), T(0));
                kernels::gemm_tn(K, P, Cout, w.value.data(), d.data() + i * out_sz, dcol.data());
                kernels::col2im(g, dcol.data(), din.data() + i * in_sz);
            }
        }
        return din;
    }

    std::vector<T> pool_forward(Layer& l, std::vector<T> in, std::size_t n, const ForwardOptions& opt, LayerCache<T>& c) {
        const int C = l.in.c, H = l.in.h, W = l.in.w, OH = l.out.h, OW = l.out.w;
        const int kh = l.spec.kernel_h, kw = l.spec.kernel_w, s = l.spec.stride, pad = l.spec.pad;
        std::vector<T> out(n * l.out.size());
        if (opt.keep_cache) c.argmax.resize(out.size());
        for (std::size_t i = 0; i < n; ++i)
            for (int ch = 0; ch < C; ++ch) {
                const std::size_t base = (i * C + ch) * static_cast<std::size_t>(H) * W;
                for (int oh = 0; oh < OH; ++oh)
                    for (int ow = 0; ow < OW; ++ow) {
                        T best = T(0);
                        std::uint32_t arg = 0;
                        bool found = false;
                        for (int a = 0; a < kh; ++a)
                            for (int b = 0; b < kw; ++b) {
                                const int ih = oh * s - pad + a, iw = ow * s - pad + b;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                const std::size_t idx = base + static_cast<std::size_t>(ih) * W + iw;
                                if (!found || in[idx] > best) {
                                    best = in[idx];
                                    arg = static_cast<std::uint32_t>(idx);
                                    found = true;
                                }
                            }
                        const std::size_t o = ((i * C + ch) * OH + oh) * static_cast<std::size_t>(OW) + ow;
                        out[o] = best;
                        if (opt.keep_cache) c.argmax[o] = arg;
                    }
            }
        apply_dropout(l, out, opt, c);
        return out;
    }

    std::vector<T> pool_backward(const Layer& l, const LayerCache<T>& c, std::vector<T> d, std::size_t n) {
        if (!c.mask.empty())
            for (std::size_t i = 0; i < d.size(); ++i) d[i] *= c.mask[i];
        std::vector<T> din(n * l.in.size(), T(0));
        for (std::size_t o = 0; o < d.size(); ++o) din[c.argmax[o]] += d[o];
        return din;
    }

    NetworkConfig cfg_;
    std::vector<Shape> trace_;
    std::vector<Layer> layers_;
    std::vector<Param<T>> params_;
    OptimizerState<T> opt_;
    int out_weight_ = -1, out_bias_ = -1, super_weight_ = -1, super_bias_ = -1;
};

}  // namespace ascfuse::nnet
