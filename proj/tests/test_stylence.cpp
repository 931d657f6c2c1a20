#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "hystar/gradcheck.hpp"
#include "hystar/stylence.hpp"

using namespace hystar;

namespace {

Tensor<double> random_similarities(std::size_t n, Rng& rng) {
    Tensor<double> S({n, n});
    for (auto& v : S.values()) v = uniform(rng, -1, 1);
    return S;
}

double loss_value(const Tensor<double>& S, const std::function<Var(Graph<double>&, Var)>& f) {
    Graph<double> g;
    return g.value(f(g, g.constant(S)))[0];
}

SquareMatrix ones_offdiag(std::size_t n) {
    SquareMatrix m{n, std::vector<double>(n * n, 1.0)};
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 0.0;
    return m;
}

} // namespace

TEST(Similarity, Examples) {
    Graph<double> g;
    Var q = g.constant(Tensor<double>::matrix(2, 3, {1, 0, 0, 0, 2, 0}));
    Var s = similarity_matrix(g, q, q);
    EXPECT_LT(max_abs_diff(g.value(s), identity<double>(2)), 1e-15);

    Var p = g.scale(q, -1.0);
    Var s2 = similarity_matrix(g, q, p);
    EXPECT_DOUBLE_EQ(g.value(s2)(0, 0), -1.0);
    EXPECT_DOUBLE_EQ(g.value(s2)(1, 1), -1.0);
}

TEST(Similarity, MatchesNormalizedDotReference) {
    Rng rng(1);
    auto Q = uniform_tensor<double>({4, 8}, rng, -1, 1);
    auto P = uniform_tensor<double>({4, 8}, rng, -1, 1);
    Graph<double> g;
    const auto& S = g.value(similarity_matrix(g, g.constant(Q), g.constant(P)));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double dot = 0, nq = 0, np = 0;
            for (std::size_t k = 0; k < 8; ++k) {
                dot += Q(i, k) * P(j, k);
                nq += Q(i, k) * Q(i, k);
                np += P(j, k) * P(j, k);
            }
            EXPECT_NEAR(S(i, j), dot / std::sqrt(nq * np), 1e-14);
            EXPECT_LE(std::abs(S(i, j)), 1 + 1e-6);
        }
}

TEST(Similarity, ZeroRowIsNumericError) {
    Graph<double> g;
    Var q = g.constant(Tensor<double>({2, 3}));
    EXPECT_THROW(similarity_matrix(g, q, q), NumericError);
}

TEST(CostMatrix, Examples) {
    auto S = Tensor<double>::matrix(2, 2, {0.3, 1.0, -1.0, 0.9});
    auto C = cost_matrix(S, 1.0);
    EXPECT_DOUBLE_EQ(C(0, 1), 1.0);
    EXPECT_NEAR(C(1, 0), 7.389056, 1e-6);
    EXPECT_TRUE(std::isinf(C(0, 0)));
    EXPECT_TRUE(std::isinf(C(1, 1)));
    EXPECT_THROW(cost_matrix(S, 0.0), ContractError);
}

TEST(CostMatrix, RangeAndMonotonicity) {
    Rng rng(2);
    for (double lambda : {0.5, 1.0, 3.0}) {
        auto S = random_similarities(6, rng);
        auto C = cost_matrix(S, lambda);
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 6; ++j) {
                if (i == j) continue;
                EXPECT_GE(C(i, j), 1.0);
                EXPECT_LE(C(i, j), std::exp(2.0 / lambda));
                for (std::size_t k = 0; k < 6; ++k)
                    if (k != i && S(i, k) > S(i, j)) EXPECT_LT(C(i, k), C(i, j));
            }
    }
}

TEST(Sinkhorn, TwoByTwoIsForced) {
    auto plan = sinkhorn(cost_matrix(Tensor<double>::matrix(2, 2, {1, 0.3, -0.7, 1}), 1.0), 1.0, 50);
    EXPECT_EQ(plan.v, (std::vector<double>{0, 1, 1, 0}));
    EXPECT_EQ(plan.marginal_deviation, 0.0);
}

TEST(Sinkhorn, EqualCostsSplitEvenly) {
    Tensor<double> S({3, 3}, 0.2);
    auto plan = sinkhorn(cost_matrix(S, 1.0), 1.0, 50);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(plan(i, j), i == j ? 0.0 : 0.5, 1e-15);
}

TEST(Sinkhorn, RandomBatchFeasibleAndNearOptimal) {
    Rng rng(3);
    const double eps = 1.0;
    auto C = cost_matrix(random_similarities(8, rng), 1.0);
    auto plan = sinkhorn(C, eps, 50);
    EXPECT_LE(plan.marginal_deviation, 1e-6);
    double cost = 0.0, entropy = 0.0;
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
            const double t = plan(i, j);
            if (i == j) {
                EXPECT_EQ(t, 0.0);
                continue;
            }
            EXPECT_GE(t, 0.0);
            cost += C(i, j) * t;
            if (t > 0) entropy -= t * std::log(t);
        }
    // The entropic optimum satisfies <C,T> - eps H(T) <= <C,P> for every
    // zero-diagonal permutation plan P (H(P) = 0).
    std::vector<std::size_t> perm(8);
    int checked = 0;
    while (checked < 1000) {
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        bool derangement = true;
        for (std::size_t i = 0; i < 8; ++i) derangement = derangement && perm[i] != i;
        if (!derangement) continue;
        double pc = 0.0;
        for (std::size_t i = 0; i < 8; ++i) pc += C(i, perm[i]);
        EXPECT_LE(cost, pc + eps * entropy + 1e-6);
        ++checked;
    }
}

TEST(Sinkhorn, Errors) {
    EXPECT_THROW(sinkhorn(cost_matrix(Tensor<double>({1, 1}), 1.0), 1.0, 50), ContractError);
    EXPECT_THROW(sinkhorn(cost_matrix(Tensor<double>({3, 3}), 1.0), 0.0, 50), ContractError);
    // exp(2 / 1e-3) overflows, so every admissible entry of the rows is masked.
    Tensor<double> S({3, 3}, -1.0);
    EXPECT_THROW(sinkhorn(cost_matrix(S, 1e-3), 1.0, 50), NumericError);
}

TEST(Sinkhorn, HardNegativeGetsMoreWeight) {
    const std::size_t n = 8;
    Tensor<double> S({n, n}, -0.5);
    for (std::size_t i = 0; i < n; ++i) S(i, i) = 1.0;
    S(0, 3) = 0.9;
    auto plan = sinkhorn(cost_matrix(S, 1.0), 1.0, 50);
    double row_mean = 0.0;
    for (std::size_t j = 1; j < n; ++j) row_mean += plan(0, j);
    row_mean /= static_cast<double>(n - 1);
    EXPECT_GT(plan(0, 3), row_mean);
}

TEST(InfoNce, Examples) {
    EXPECT_EQ(loss_value(Tensor<double>::matrix(1, 1, {0.4}),
                         [](Graph<double>& g, Var s) { return infonce(g, s, 0.07); }),
              0.0);
    EXPECT_NEAR(loss_value(Tensor<double>({5, 5}, 0.3),
                           [](Graph<double>& g, Var s) { return infonce(g, s, 0.07); }),
                std::log(5.0), 1e-14);
}

TEST(InfoNce, MatchesUnstabilizedReference) {
    Rng rng(4);
    auto S = random_similarities(4, rng);
    const double tau = 0.5;
    double ref = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        double den = 0.0;
        for (std::size_t j = 0; j < 4; ++j) den += std::exp(S(i, j) / tau);
        ref -= std::log(std::exp(S(i, i) / tau) / den);
    }
    ref /= 4.0;
    EXPECT_NEAR(loss_value(S, [&](Graph<double>& g, Var s) { return infonce(g, s, tau); }), ref, 1e-10);
}

TEST(StyleNce, GammaZeroIsZero) {
    Rng rng(5);
    LossConfig cfg;
    cfg.gamma = 0.0;
    auto S = random_similarities(6, rng);
    EXPECT_EQ(loss_value(S, [&](Graph<double>& g, Var s) { return stylence(g, s, cfg); }), 0.0);
}

TEST(StyleNce, OnesWeightsReduceToInfoNce) {
    Rng rng(6);
    auto S = random_similarities(6, rng);
    const double a = loss_value(S, [&](Graph<double>& g, Var s) {
        return stylence_weighted(g, s, ones_offdiag(6), 1.0, 0.07);
    });
    const double b = loss_value(S, [&](Graph<double>& g, Var s) { return infonce(g, s, 0.07); });
    EXPECT_EQ(a, b);
}

TEST(StyleNce, TwoSampleClosedForm) {
    LossConfig cfg;
    cfg.tau = 1.0;
    cfg.gamma = 1.0;
    const double l = loss_value(identity<double>(2), [&](Graph<double>& g, Var s) { return stylence(g, s, cfg); });
    EXPECT_NEAR(l, -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)), 1e-15);
    EXPECT_NEAR(l, 0.313262, 1e-6);
}

TEST(StyleNce, NonNegative) {
    Rng rng(7);
    LossConfig cfg;
    for (int t = 0; t < 20; ++t) {
        auto S = random_similarities(2 + static_cast<std::size_t>(t % 7), rng);
        EXPECT_GE(loss_value(S, [&](Graph<double>& g, Var s) { return stylence(g, s, cfg); }), 0.0);
    }
}

TEST(StyleNce, Monotonicity) {
    Rng rng(8);
    auto S = random_similarities(5, rng);
    LossConfig cfg;
    auto omega = stylence_weights(S, cfg);
    auto f = [&](const Tensor<double>& s) {
        return loss_value(s, [&](Graph<double>& g, Var v) { return stylence_weighted(g, v, omega, cfg.gamma, cfg.tau); });
    };
    const double base = f(S);
    auto up_diag = S;
    up_diag(2, 2) += 0.05;
    EXPECT_LT(f(up_diag), base);
    auto up_neg = S;
    up_neg(2, 4) += 0.05;
    ASSERT_GT(omega(2, 4), 0.0);
    EXPECT_GT(f(up_neg), base);
}

TEST(StyleNce, PermutationEquivariance) {
    Rng rng(9);
    LossConfig cfg;
    auto S = random_similarities(7, rng);
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor<double> P({7, 7});
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j < 7; ++j) P(i, j) = S(perm[i], perm[j]);
    auto f = [&](const Tensor<double>& s) {
        return loss_value(s, [&](Graph<double>& g, Var v) { return stylence(g, v, cfg); });
    };
    EXPECT_NEAR(f(S), f(P), 1e-10);
}

TEST(StyleNce, GradientWithFrozenWeights) {
    Rng rng(10);
    auto Q = uniform_tensor<double>({6, 5}, rng, -1, 1);
    auto P = uniform_tensor<double>({6, 5}, rng, -1, 1);
    LossConfig cfg;
    cfg.tau = 0.2;
    SquareMatrix omega;
    {
        Graph<double> g;
        omega = stylence_weights(g.value(similarity_matrix(g, g.constant(Q), g.constant(P))), cfg);
    }
    auto res = check_gradients(
        [&](Graph<double>& g) {
            return stylence_weighted(g, similarity_matrix(g, g.leaf(Q), g.leaf(P)), omega, cfg.gamma, cfg.tau);
        },
        {{"Q", &Q}, {"P", &P}});
    EXPECT_LT(max_error(res), 1e-5);
}

TEST(BaselineLosses, Triplet) {
    EXPECT_EQ(loss_value(identity<double>(3), [](Graph<double>& g, Var s) { return triplet_loss(g, s, 0.2); }), 0.0);
    EXPECT_NEAR(loss_value(Tensor<double>({4, 4}, 0.4), [](Graph<double>& g, Var s) { return triplet_loss(g, s, 0.2); }),
                0.2, 1e-15);
}

TEST(BaselineLosses, HardNegativeWithAllNegativesIsInfoNce) {
    Rng rng(11);
    auto S = random_similarities(6, rng);
    const double a = loss_value(S, [](Graph<double>& g, Var s) { return infonce_hard_negative(g, s, 0.07, 5); });
    const double b = loss_value(S, [](Graph<double>& g, Var s) { return infonce(g, s, 0.07); });
    EXPECT_EQ(a, b);
    const double c = loss_value(S, [](Graph<double>& g, Var s) { return infonce_hard_negative(g, s, 0.07, 2); });
    EXPECT_LE(c, b);
    EXPECT_EQ(default_hard_negatives(48, 0), 12u);
}

TEST(MatrixCsv, NineSignificantDigits) {
    SquareMatrix m{2, {0.0, 1.0 / 3.0, std::numeric_limits<double>::infinity(), 2.0}};
    std::ostringstream os;
    write_matrix_csv(os, m);
    EXPECT_EQ(os.str(), "0,0.333333333\ninf,2\n");
}

TEST(LossConfig, Validation) {
    LossConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.gamma = 0.0;
    EXPECT_NO_THROW(cfg.validate());
    cfg.tau = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}
