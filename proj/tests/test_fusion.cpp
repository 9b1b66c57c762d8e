#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "ascfuse/fusion.hpp"
#include "svm_oracle.hpp"

using namespace ascfuse;
using namespace ascfuse::fusion;

namespace {

Matrix gaussian_diag(std::size_t n, const std::vector<double>& var, Rng& rng) {
    Matrix x(n, var.size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < var.size(); ++j) x(i, j) = std::sqrt(var[j]) * rng.normal() + 5.0 * j;
    return x;
}

}  // namespace

TEST(ConcatRandom, SingleBlockAndMultiset) {
    Rng rng(1);
    Matrix one{{1, 2, 3}};
    EXPECT_EQ(concat_random(one, rng).vector, (std::vector<double>{1, 2, 3}));
    Matrix f{{1, 1}, {2, 2}, {3, 3}, {4, 4}};
    const auto c = concat_random(f, rng, 6);
    ASSERT_EQ(c.vector.size(), 12u);
    std::vector<double> firsts;
    for (std::size_t p = 0; p < 4; ++p) {
        EXPECT_EQ(c.vector[2 * p], c.vector[2 * p + 1]);
        EXPECT_EQ(c.vector[2 * p], f(c.order[p], 0));
        firsts.push_back(c.vector[2 * p]);
    }
    std::sort(firsts.begin(), firsts.end());
    EXPECT_EQ(firsts, (std::vector<double>{1, 2, 3, 4}));
    for (std::size_t i = 8; i < 12; ++i) EXPECT_EQ(c.vector[i], 0.0);
    Rng a = segment_rng(9, "seg-1"), b = segment_rng(9, "seg-1");
    EXPECT_EQ(concat_random(f, a).vector, concat_random(f, b).vector);
    EXPECT_THROW(stack_rows({{1, 2}, {3}}), ShapeError);
}

TEST(Pca, RankOneLine) {
    TrainingRows t{Matrix{{1, 1}, {2, 2}, {-3, -3}, {0.5, 0.5}}, {}};
    const auto m = pca_fit(t);
    ASSERT_EQ(m.output_dim(), 1u);
    EXPECT_NEAR(std::abs(m.components(0, 0)), 1 / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(m.components(0, 0), m.components(0, 1), 1e-12);
    for (double v : pca_transform(m, m.mean)) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Pca, KnownCovarianceRatios) {
    Rng rng(2);
    TrainingRows t{gaussian_diag(10000, {9, 1, 0.01}, rng), {}};
    const auto m = pca_fit(t, 0.99);
    EXPECT_EQ(m.output_dim(), 2u);
    EXPECT_NEAR(m.all_ratios[0], 9 / 10.01, 0.05 * 9 / 10.01);
    EXPECT_NEAR(m.all_ratios[1], 1 / 10.01, 0.05 * 1 / 10.01);
    EXPECT_NEAR(m.all_ratios[2], 0.01 / 10.01, 0.05 * 0.01 / 10.01);
    const Matrix cct = m.components * m.components.transpose();
    for (std::size_t i = 0; i < cct.rows(); ++i)
        for (std::size_t j = 0; j < cct.cols(); ++j) EXPECT_NEAR(cct(i, j), i == j, 1e-8);
}

TEST(Pca, ReconstructionErrorMatchesDiscardedVariance) {
    Rng rng(3);
    TrainingRows t{gaussian_diag(400, {4, 2, 1, 0.5, 0.1}, rng), {}};
    const auto m = pca_fit(t, 0.9);
    double total = 0.0, resid = 0.0;
    for (std::size_t i = 0; i < t.rows.rows(); ++i) {
        const auto g = pca_transform(m, t.rows.row(i));
        for (std::size_t j = 0; j < t.rows.cols(); ++j) {
            double rec = m.mean[j];
            for (std::size_t r = 0; r < g.size(); ++r) rec += g[r] * m.components(r, j);
            const double c = t.rows(i, j) - m.mean[j];
            total += c * c;
            resid += (t.rows(i, j) - rec) * (t.rows(i, j) - rec);
        }
    }
    double kept = 0.0;
    for (double r : m.explained) kept += r;
    EXPECT_NEAR(resid / total, 1.0 - kept, 1e-6);
}

TEST(Pca, Preconditions) {
    EXPECT_THROW(pca_fit(TrainingRows{Matrix{{1, 2}}, {}}), ConfigError);
    EXPECT_THROW(pca_transform(PcaModel{}, std::vector<double>{1.0}), ConfigError);
}

TEST(Aggregate, OrderAndErrors) {
    GlobalFeatures g{{SpecKind::stft, {1, 2}}, {SpecKind::cqt, {3, 4, 5}}};
    EXPECT_EQ(aggregate(g, {SpecKind::stft, SpecKind::cqt}), (std::vector<double>{1, 2, 3, 4, 5}));
    try {
        aggregate(g, {SpecKind::stft, SpecKind::mfcc}, "s7");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("MFCC"), std::string::npos);
    }
    std::vector<std::string> names;
    for (const auto& p : supported_pairs()) names.push_back(pair_name(p));
    EXPECT_EQ(names, (std::vector<std::string>{"STFT+CQT", "STFT+MFCC", "MFCC+CQT"}));
    EXPECT_EQ(parse_pair("stft+cqt").first, SpecKind::stft);
    EXPECT_THROW(parse_pair("CQT+STFT"), ConfigError);
}

TEST(Svm, SymmetricPairMidpoint) {
    Matrix x{{-1}, {1}};
    const auto m = svm_train(x, std::vector<int>{0, 1}, 2);
    const auto& k = m.machines[1];
    EXPECT_NEAR(k.w[0], 1.0, 1e-3);
    EXPECT_NEAR(-k.b / k.w[0], 0.0, 1e-3);
    EXPECT_EQ(m.predict(x), (std::vector<int>{0, 1}));
    EXPECT_GE(k.decision(x.row(1)), 1.0 - 1e-3);
}

TEST(Svm, TinyInstancesMatchExactAndGridOptimum) {
    Rng rng(4);
    for (int t = 0; t < 20; ++t) {
        const std::size_t n = 2 + rng.below(5);
        Matrix x(n, 2);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x(i, 0) = rng.uniform(-2, 2);
            x(i, 1) = rng.uniform(-2, 2);
            y[i] = i == 0 ? 1 : i == 1 ? -1 : (rng.below(2) ? 1 : -1);
        }
        if (t % 5 == 0) {  // duplicated vector with conflicting labels
            x(1, 0) = x(0, 0);
            x(1, 1) = x(0, 1);
        }
        const auto m = svm_train_binary(x, y);
        const auto exact = check::svm_exact(x, y, 1.0);
        EXPECT_NEAR(m.primal, exact.objective, 1e-3) << "instance " << t;
        EXPECT_LE(m.primal - m.dual, 1e-6);
        if (t < 5) {
            EXPECT_NEAR(check::svm_grid(x, y, 1.0), exact.objective, 1e-3);
        }
    }
}

TEST(Svm, DualMonotoneAndDeterministic) {
    Rng rng(5);
    Matrix x(60, 5);
    std::vector<int> y(60);
    for (std::size_t i = 0; i < 60; ++i) {
        y[i] = i % 2 ? 1 : -1;
        for (std::size_t j = 0; j < 5; ++j) x(i, j) = rng.normal() + 0.4 * y[i];
    }
    const auto m = svm_train_binary(x, y, {1.0, 1e-6, 200000, 3});
    for (std::size_t s = 1; s < m.dual_trace.size(); ++s) EXPECT_GE(m.dual_trace[s], m.dual_trace[s - 1] - 1e-12);
    EXPECT_LE(m.primal - m.dual, 1e-6);
    const auto again = svm_train_binary(x, y, {1.0, 1e-6, 200000, 3});
    EXPECT_EQ(m.w, again.w);
}

TEST(Svm, ZeroFeatureAndScaleInvariance) {
    Rng rng(6);
    Matrix x(30, 2), xz(30, 3);
    std::vector<int> labels(30);
    for (std::size_t i = 0; i < 30; ++i) {
        labels[i] = static_cast<int>(i % 3);
        x(i, 0) = xz(i, 0) = rng.normal() + labels[i];
        x(i, 1) = xz(i, 1) = rng.normal() - labels[i];
    }
    const auto m = svm_train(x, labels, 3), mz = svm_train(xz, labels, 3);
    EXPECT_EQ(m.predict(x), mz.predict(xz));
    auto scaled = m;
    for (auto& k : scaled.machines) {
        for (double& w : k.w) w *= 3.5;
        k.b *= 3.5;
    }
    EXPECT_EQ(m.predict(x), scaled.predict(x));
    EXPECT_THROW(svm_train(x, std::vector<int>(30, 1), 3), DataError);
}

TEST(Vote, MajorityAndTieBreak) {
    EXPECT_EQ(majority_vote(std::vector<int>{1, 1, 2}, 3), 1);
    Matrix q{{0.0, 0.45, 0.55}, {0.0, 0.45, 0.55}};
    EXPECT_EQ(majority_vote(std::vector<int>{1, 2}, 3, &q), 2);
    Matrix r{{0.0, 0.9, 0.1}, {0.0, 0.0, 1.0}};  // 0.9 vs 1.1
    EXPECT_EQ(majority_vote(std::vector<int>{1, 2}, 3, &r), 2);
    EXPECT_EQ(majority_vote(std::vector<int>{2, 1}, 3), 1);
    EXPECT_DOUBLE_EQ(accuracy(std::vector<int>{1, 2}, std::vector<int>{1, 2}), 1.0);
}

TEST(ModelIo, RoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "ascfuse_fusion_io";
    std::filesystem::remove_all(dir);
    Rng rng(7);
    TrainingRows t{gaussian_diag(50, {3, 1, 0.2}, rng), {}};
    const auto pca = pca_fit(t);
    save_pca(dir / "pca", pca);
    const auto pb = load_pca(dir / "pca");
    EXPECT_EQ(pb.components, pca.components);
    EXPECT_EQ(pb.mean, pca.mean);
    std::vector<int> labels(50);
    for (int i = 0; i < 50; ++i) labels[i] = i % 2;
    const auto svm = svm_train(t.rows, labels, 2);
    save_svm(dir / "svm", svm);
    EXPECT_EQ(load_svm(dir / "svm").predict(t.rows), svm.predict(t.rows));
    std::filesystem::remove_all(dir);
}
