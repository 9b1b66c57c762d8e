#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "ascfuse/nnet.hpp"
#include "gradcheck.hpp"

using namespace ascfuse;
using namespace ascfuse::nnet;

namespace {

template <class T>
Batch<T> random_batch(const Shape& s, int n, Rng& rng) {
    Batch<T> b;
    b.n = n;
    b.shape = s;
    b.data.resize(static_cast<std::size_t>(n) * s.size());
    for (T& v : b.data) v = static_cast<T>(rng.uniform());
    return b;
}

NetworkConfig tiny_two_conv(int classes) {
    NetworkConfig cfg;
    cfg.input_h = cfg.input_w = 8;
    cfg.num_classes = classes;
    cfg.layers = {
        {LayerKind::conv, "c1", 3, 3, 1, 1, 3, Activation::relu, true, 0.0},
        {LayerKind::maxpool, "p1", 2, 2, 2, 0, 0, Activation::none, false, 0.3},
        {LayerKind::conv, "c2", 3, 3, 1, 0, 2, Activation::relu, false, 0.0},
        {LayerKind::flatten, "flat", 1, 1, 1, 0, 0, Activation::none, false, 0.0},
        {LayerKind::full, "out", 1, 1, 1, 0, classes, Activation::none, false, 0.0},
    };
    return cfg;
}

// Class 0: bright upper half; class 1: bright lower half.
PatchSet<float> separable_set(int per_class, int size, std::uint64_t seed) {
    PatchSet<float> s;
    s.shape = {1, size, size};
    Rng rng(seed);
    for (int i = 0; i < 2 * per_class; ++i) {
        const int cls = i % 2;
        for (int r = 0; r < size; ++r)
            for (int c = 0; c < size; ++c) {
                const bool lit = (r < size / 2) == (cls == 0);
                s.data.push_back(static_cast<float>((lit ? 0.7 : 0.2) + 0.1 * rng.uniform()));
            }
        s.labels.push_back(cls);
        s.groups.push_back(i);
    }
    return s;
}

}  // namespace

TEST(ShapePlan, Table1Trace) {
    for (int m : {4, 15}) {
        const auto trace = shape_plan(table1_config(m));
        const std::vector<int> expect{143, 72, 72, 36, 36, 36, 18, 18, 18, 18, 18, 9, 7, 7, 7};
        for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(trace[i].h, expect[i]) << "layer " << i;
        EXPECT_EQ(feature_length(table1_config(m)), static_cast<std::size_t>(49 * m));
    }
    EXPECT_EQ(feature_length(table1_config(15)), 735u);
    const auto& conv1 = table1_config(15).layers[0];
    EXPECT_EQ(conv1.kernel_h, 5);
    EXPECT_EQ(conv1.stride, 2);
    EXPECT_EQ(conv1.pad, 2);
    EXPECT_EQ(conv1.channels, 32);
}

TEST(ShapePlan, VggMini) {
    EXPECT_EQ(feature_length(vgg_mini_config(4)), 16u);
    EXPECT_EQ(shape_plan(vgg_mini_config(4))[1].c, 8);
}

TEST(ShapePlan, CollapseNamesLayer) {
    try {
        shape_plan(table1_config(4, 16));
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("conv9"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("spatial collapse"), std::string::npos);
    }
}

TEST(Forward, ConvMatchesDirectCrossCorrelation) {
    NetworkConfig cfg;
    cfg.input_h = cfg.input_w = 5;
    cfg.num_classes = 2;
    cfg.layers = {
        {LayerKind::conv, "c", 3, 3, 1, 0, 1, Activation::none, false, 0.0},
        {LayerKind::flatten, "flat", 1, 1, 1, 0, 0, Activation::none, false, 0.0},
        {LayerKind::full, "out", 1, 1, 1, 0, 2, Activation::none, false, 0.0},
    };
    Rng rng(1);
    auto net = Network<double>::build(cfg, rng);
    const double k[9] = {1, 0, -1, 2, 0, -2, 1, 0, -1};
    std::copy(k, k + 9, net.params()[0].value.begin());
    net.params()[1].value[0] = 0.5;
    Batch<double> x;
    x.n = 1;
    x.shape = {1, 5, 5};
    for (int i = 0; i < 25; ++i) x.data.push_back(i * i % 7);
    const auto fr = net.forward(x, {});
    ASSERT_EQ(fr.features.size(), 9u);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            double s = 0.5;
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) s += k[a * 3 + b] * x.data[(r + a) * 5 + c + b];
            EXPECT_DOUBLE_EQ(fr.features[r * 3 + c], s);
        }
}

TEST(Forward, ShapeMismatchNamesDims) {
    Rng rng(0);
    auto net = Network<float>::build(vgg_mini_config(3), rng);
    Rng d(1);
    try {
        net.forward(random_batch<float>({1, 32, 32}, 1, d), {});
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("1x64x64"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("1x32x32"), std::string::npos);
    }
}

TEST(Forward, EvalDeterministicAndFeaturesNonNegative) {
    Rng rng(3);
    auto net = Network<float>::build(vgg_mini_config(4), rng);
    Rng d(4);
    const auto x = random_batch<float>(net.trace().front(), 3, d);
    const auto a = net.forward(x, {});
    const auto b = net.forward(x, {});
    EXPECT_EQ(a.logits, b.logits);
    EXPECT_EQ(a.features.size(), 3 * net.feature_length());
    for (float v : a.features) EXPECT_GE(v, 0.0f);
}

TEST(Softmax, UniformAndNormalized) {
    const std::vector<double> z(4, 0.0);
    for (double p : softmax_rows<double>(z, 4)) EXPECT_DOUBLE_EQ(p, 0.25);
    Rng rng(2);
    std::vector<float> logits(50);
    for (float& v : logits) v = static_cast<float>(rng.uniform(-30, 30));
    const auto p = softmax_rows<float>(logits, 5);
    for (int r = 0; r < 10; ++r) EXPECT_NEAR(std::accumulate(p.begin() + r * 5, p.begin() + r * 5 + 5, 0.0), 1.0, 1e-6);
    const std::vector<double> l{2.0, 1.0, 0.5};
    EXPECT_EQ(argmax<double>(l), 0u);
}

TEST(Loss, ClosedFormsAndRecompute) {
    Rng rng(5);
    auto net = Network<double>::build(tiny_two_conv(4), rng);
    ForwardResult<double> fr;
    fr.batch = 2;
    fr.logits.assign(8, 0.0);
    const std::vector<int> y{0, 3};
    EXPECT_NEAR(evaluate_loss(net, fr, y, {}, LossSpec::basic(0.0), false).total, std::log(4.0), 1e-12);

    fr.logits = {50, 0, 0, 0, 0, 0, 0, 50};
    EXPECT_NEAR(evaluate_loss(net, fr, y, {}, LossSpec::basic(0.0), false).total, 0.0, 1e-12);

    // Clamped probability: finite loss.
    fr.logits = {-1000, 1000, 0, 0, 0, 0, 0, 0};
    const double clamped = evaluate_loss(net, fr, std::vector<int>{0, 1}, {}, LossSpec::basic(0.0), false).total;
    EXPECT_TRUE(std::isfinite(clamped));
    EXPECT_NEAR(clamped, (-std::log(1e-12) + std::log(4.0)) / 2, 1e-9);

    // Full recompute from softmax outputs and weights.
    Rng d(6);
    const auto x = random_batch<double>(net.trace().front(), 5, d);
    const auto out = net.forward(x, {});
    const std::vector<int> labels{0, 1, 2, 3, 1};
    const auto p = softmax_rows<double>(out.logits, 4);
    double nll = 0.0;
    for (int i = 0; i < 5; ++i) nll -= std::log(p[i * 4 + labels[i]]);
    double w2 = 0.0;
    for (double w : net.out_weight().value) w2 += w * w;
    EXPECT_NEAR(evaluate_loss(net, out, labels, {}, LossSpec::basic(1e-4), false).total, nll / 5 + 1e-4 * w2, 1e-12);
}

TEST(Loss, NllGradientIsSoftmaxMinusOneHot) {
    Rng rng(7);
    auto net = Network<double>::build(tiny_two_conv(3), rng);
    Rng d(8);
    const auto x = random_batch<double>(net.trace().front(), 1, d);
    net.zero_grad();
    const auto fr = net.forward(x, {});
    evaluate_loss(net, fr, std::vector<int>{2}, {}, LossSpec::basic(0.0), true);
    const auto p = softmax_rows<double>(fr.logits, 3);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(net.out_bias().grad[j], p[j] - (j == 2), 1e-12);
}

TEST(BatchNorm, TrainModeNormalizesPerChannel) {
    Rng rng(9);
    auto net = Network<double>::build(vgg_mini_config(4), rng);
    Rng d(10);
    auto x = random_batch<double>(net.trace().front(), 4, d);
    for (double& v : x.data) v = 30.0 * v + 2.0;
    Rng drop(1);
    const auto fr = net.forward(x, {Mode::train, &drop, true});
    const auto& c = fr.cache[0];
    const Shape out = net.trace()[1];
    const std::size_t P = static_cast<std::size_t>(out.h) * out.w;
    for (int ch = 0; ch < out.c; ++ch) {
        double s = 0.0, ss = 0.0;
        for (int i = 0; i < 4; ++i)
            for (std::size_t p = 0; p < P; ++p) {
                const double v = c.xhat[i * out.size() + ch * P + p];
                s += v;
                ss += v * v;
            }
        const double m = s / (4.0 * P);
        EXPECT_NEAR(m, 0.0, 1e-5);
        EXPECT_NEAR(ss / (4.0 * P) - m * m, 1.0, 1e-5);
    }
}

TEST(Dropout, InvertedExpectationMatchesEval) {
    NetworkConfig cfg;
    cfg.input_h = cfg.input_w = 4;
    cfg.num_classes = 2;
    cfg.layers = {
        {LayerKind::conv, "c", 1, 1, 1, 0, 1, Activation::relu, false, 0.0},
        {LayerKind::maxpool, "p", 2, 2, 2, 0, 0, Activation::none, false, 0.3},
        {LayerKind::flatten, "flat", 1, 1, 1, 0, 0, Activation::none, false, 0.0},
        {LayerKind::full, "out", 1, 1, 1, 0, 2, Activation::none, false, 0.0},
    };
    Rng rng(11);
    auto net = Network<double>::build(cfg, rng);
    net.params()[0].value[0] = 1.0;
    Batch<double> x;
    x.n = 1;
    x.shape = {1, 4, 4};
    for (int i = 0; i < 16; ++i) x.data.push_back(1.0 + i);
    const auto ref = net.forward(x, {});
    std::vector<double> mean(ref.features.size(), 0.0);
    Rng drop(12);
    const int draws = 10000;
    for (int k = 0; k < draws; ++k) {
        const auto fr = net.forward(x, {Mode::train, &drop, false});
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += fr.features[i] / draws;
    }
    for (std::size_t i = 0; i < mean.size(); ++i) EXPECT_NEAR(mean[i], ref.features[i], 0.02 * ref.features[i]);
}

TEST(Dropout, TrainModeRequiresRng) {
    Rng rng(0);
    auto net = Network<float>::build(vgg_mini_config(3), rng);
    Rng d(1);
    EXPECT_THROW(net.forward(random_batch<float>(net.trace().front(), 2, d), {Mode::train, nullptr, true}), ConfigError);
}

TEST(GradCheck, TinyTwoConvNet) {
    Rng rng(13);
    auto net = Network<double>::build(tiny_two_conv(3), rng);
    Rng d(14);
    check::GradCheckInput in{random_batch<double>(net.trace().front(), 3, d), {0, 1, 2}, {}, LossSpec::basic(1e-2), 77};
    in.spec.global_decay = true;
    Rng pick(15);
    const auto r = check::grad_check(net, in, pick, 1000);
    EXPECT_LT(r.max_rel, 1e-6) << r.worst;
    EXPECT_GT(r.checked, 100);
}

TEST(GradCheck, VggMiniMultitask) {
    Rng rng(16);
    auto cfg = vgg_mini_config(4);
    cfg.num_superclasses = 2;
    auto net = Network<double>::build(cfg, rng);
    Rng d(17);
    check::GradCheckInput in{random_batch<double>(net.trace().front(), 4, d), {0, 1, 2, 3}, {0, 0, 1, 1},
                               LossSpec::multitask({0, 0, 1, 1}, 0.6, 1e-2, 1e-2), 99};
    Rng pick(18);
    const auto r = check::grad_check(net, in, pick, 6);
    EXPECT_LT(r.max_rel, 1e-6) << r.worst;
}

TEST(EarlyStop, FlatHistoryStopsAfterPatience) {
    EarlyStopper s(30);
    int epochs = 0;
    while (!s.should_stop()) {
        s.update(1.0);
        ++epochs;
    }
    EXPECT_EQ(epochs, 31);
    EarlyStopper t(2);
    EXPECT_TRUE(t.update(3.0));
    EXPECT_FALSE(t.update(3.0));
    EXPECT_TRUE(t.update(2.0));
    EXPECT_FALSE(t.should_stop());
}

TEST(Split, GroupsStayTogetherAndClassesCovered) {
    std::vector<int> labels, groups;
    for (int g = 0; g < 30; ++g)
        for (int p = 0; p < 3; ++p) {
            labels.push_back(g % 3);
            groups.push_back(g);
        }
    const auto s = stratified_split(labels, groups, 0.1, 4);
    std::set<int> tg, vg, vc;
    for (auto i : s.train) tg.insert(groups[i]);
    for (auto i : s.validation) {
        vg.insert(groups[i]);
        vc.insert(labels[i]);
    }
    for (int g : vg) EXPECT_EQ(tg.count(g), 0u);
    EXPECT_EQ(vc.size(), 3u);
    EXPECT_EQ(vg.size(), 3u);
    EXPECT_EQ(s.train.size() + s.validation.size(), labels.size());
}

TEST(Train, RejectsEmptyClass) {
    Rng rng(0);
    auto net = Network<float>::build(vgg_mini_config(3), rng);
    auto set = separable_set(4, 64, 1);
    TrainConfig tc;
    tc.max_epochs = 2;
    tc.patience = 1;
    EXPECT_THROW(train(net, set, set, tc, LossSpec::basic()), DataError);
}

TEST(Train, SeparableToyReachesHighAccuracyDeterministically) {
    const auto set = separable_set(24, 64, 21);
    const auto split = stratified_split(set.labels, set.groups, 0.2, 3);
    const auto tr = set.subset(split.train), va = set.subset(split.validation);
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.batch_size = 8;
    tc.max_epochs = 12;
    tc.patience = 6;
    tc.seed = 5;
    Rng r1(1), r2(1);
    auto a = Network<float>::build(vgg_mini_config(2), r1);
    auto b = Network<float>::build(vgg_mini_config(2), r2);
    const auto ha = train(a, tr, va, tc, LossSpec::basic());
    const auto hb = train(b, tr, va, tc, LossSpec::basic());
    for (std::size_t k = 0; k < a.params().size(); ++k) EXPECT_EQ(a.params()[k].value, b.params()[k].value);
    ASSERT_GE(ha.epochs.size(), 5u);
    EXPECT_LT(ha.epochs[4].train_loss, ha.epochs[0].train_loss);
    EXPECT_EQ(ha.epochs.size(), hb.epochs.size());
    const auto pred = predict(a, tr);
    int correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == tr.labels[i];
    EXPECT_GE(correct / double(pred.size()), 0.99);
}

TEST(Train, StartingWeightsKeptWhenEveryEpochIsWorse) {
    const auto set = separable_set(12, 64, 22);
    const auto split = stratified_split(set.labels, set.groups, 0.25, 4);
    const auto tr = set.subset(split.train), va = set.subset(split.validation);
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.batch_size = 8;
    tc.max_epochs = 6;
    tc.patience = 5;
    tc.seed = 6;
    Rng rng(2);
    auto net = Network<float>::build(vgg_mini_config(2), rng);
    train(net, tr, va, tc, LossSpec::basic());
    const auto before = net.params();
    tc.lr = 5.0;
    tc.max_epochs = 3;
    tc.patience = 2;
    const auto h = train(net, tr, va, tc, LossSpec::basic());
    EXPECT_EQ(h.best_epoch, 0);
    EXPECT_EQ(h.best().val_loss, h.start.val_loss);
    for (const auto& e : h.epochs) EXPECT_GT(e.val_loss, h.start.val_loss);
    for (std::size_t k = 0; k < before.size(); ++k) EXPECT_EQ(net.params()[k].value, before[k].value);
}

TEST(Checkpoint, RoundTripAndSize) {
    Rng rng(30);
    auto cfg = vgg_mini_config(4);
    cfg.num_superclasses = 2;
    auto net = Network<float>::build(cfg, rng);
    // Move running statistics away from their defaults.
    Rng d(31), drop(32);
    net.forward(random_batch<float>(net.trace().front(), 4, d), {Mode::train, &drop, false});
    const auto dir = std::filesystem::temp_directory_path() / "ascfuse_ckpt_test";
    std::filesystem::remove_all(dir);
    save_checkpoint(dir / "m", net, {7, 42});
    CheckpointInfo info;
    auto back = load_checkpoint<float>(dir / "m", &info);
    EXPECT_EQ(info.epoch, 7);
    EXPECT_EQ(info.seed, 42u);
    EXPECT_EQ(back.num_superclasses(), 2);
    Rng e(33);
    const auto x = random_batch<float>(net.trace().front(), 3, e);
    EXPECT_EQ(net.forward(x, {}).logits, back.forward(x, {}).logits);
    EXPECT_EQ(net.forward(x, {}).super_logits, back.forward(x, {}).super_logits);

    std::size_t running = 0;
    for (const auto& l : net.layers()) running += l.running_mean.size() * 2;
    const auto bytes = std::filesystem::file_size(dir / "m.weights.atns");
    EXPECT_EQ(bytes, (net.parameter_count() + running) * 4 + 12);
    EXPECT_LT(std::filesystem::file_size(dir / "m.ckpt.json"), 16384u);

    auto other = Network<float>::build(vgg_mini_config(5), rng);
    save_checkpoint(dir / "o", other);
    std::filesystem::copy_file(dir / "o.ckpt.json", dir / "m.ckpt.json", std::filesystem::copy_options::overwrite_existing);
    EXPECT_THROW(load_checkpoint<float>(dir / "m"), ShapeError);
    std::filesystem::remove_all(dir);
}
