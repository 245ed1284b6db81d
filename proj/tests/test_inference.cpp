#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bpa/inference.hpp"
#include "bpa/simulate.hpp"
#include "support.hpp"

namespace bpa {
namespace {

Matrix random_spd(int d, Rng& rng) {
    const Matrix a = test::random_matrix(d, d, rng);
    return a * a.transpose() + 0.5 * Matrix::Identity(d, d);
}

// Monte Carlo E_from[log f_from(x) - log f_to(x)] with x drawn through a Cholesky factor.
double kl_monte_carlo(const GaussianSummary& from, const GaussianSummary& to, int n, Rng& rng) {
    const Eigen::LLT<Matrix> lf(from.sigma_mat), lt(to.sigma_mat);
    const Matrix lfm = lf.matrixL();
    const Matrix ltm = lt.matrixL();
    const double logdet_f = 2 * lfm.diagonal().array().log().sum();
    const double logdet_t = 2 * ltm.diagonal().array().log().sum();
    const int d = from.dim();
    Vector z(d);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) z(j) = rng.normal();
        const Vector x = from.mu + lfm * z;
        const Vector u = lt.matrixL().solve(x - to.mu);
        total += -0.5 * logdet_f - 0.5 * z.squaredNorm() + 0.5 * logdet_t + 0.5 * u.squaredNorm();
    }
    return total / n;
}

TEST(KlDivergence, WorkedValues) {
    const GaussianSummary one(Vector::Zero(2), Matrix::Identity(2, 2));
    const GaussianSummary four(Vector::Zero(2), 4 * Matrix::Identity(2, 2));
    // D(N2 || N1) with S1 = I, S2 = 4I.
    EXPECT_NEAR(kl_divergence_gaussian(four, one), 0.5 * (8 + 0 - 2 + std::log(1.0 / 16)), 1e-12);
    EXPECT_NEAR(kl_divergence_gaussian(four, one), 1.6137, 1e-4);
    const GaussianSummary shifted(Eigen::Vector2d(2, 0), Matrix::Identity(2, 2));
    EXPECT_NEAR(kl_divergence_gaussian(shifted, one), 2.0, 1e-12);
    EXPECT_EQ(kl_divergence_gaussian(one, one), 0.0);
}

TEST(KlDivergence, WorkedValuesAgreeWithMonteCarlo) {
    Rng rng(81);
    const GaussianSummary one(Vector::Zero(2), Matrix::Identity(2, 2));
    const GaussianSummary four(Vector::Zero(2), 4 * Matrix::Identity(2, 2));
    const GaussianSummary shifted(Eigen::Vector2d(2, 0), Matrix::Identity(2, 2));
    EXPECT_NEAR(kl_monte_carlo(four, one, 400000, rng) / kl_divergence_gaussian(four, one), 1.0, 0.02);
    EXPECT_NEAR(kl_monte_carlo(shifted, one, 400000, rng) / kl_divergence_gaussian(shifted, one), 1.0, 0.02);
}

TEST(KlDivergence, NonNegativeAndZeroOnlyAtEquality) {
    Rng rng(82);
    for (int trial = 0; trial < 50; ++trial) {
        const int d = 1 + static_cast<int>(rng.below(6));
        const GaussianSummary a(test::random_matrix(d, 1, rng), random_spd(d, rng));
        const GaussianSummary b(test::random_matrix(d, 1, rng), random_spd(d, rng));
        EXPECT_GT(kl_divergence_gaussian(a, b), 0.0);
        EXPECT_LT(std::abs(kl_divergence_gaussian(a, a)), 1e-10);
    }
}

TEST(KlDivergence, EqualCovariancesGiveHalfMahalanobis) {
    Rng rng(83);
    for (int trial = 0; trial < 50; ++trial) {
        const int d = 2 + static_cast<int>(rng.below(5));
        const Matrix s = random_spd(d, rng);
        const Vector m1 = test::random_matrix(d, 1, rng), m2 = test::random_matrix(d, 1, rng);
        const Vector diff = m1 - m2;
        const double half_mahalanobis = 0.5 * diff.dot(s.inverse() * diff);
        EXPECT_NEAR(kl_divergence_gaussian(GaussianSummary(m1, s), GaussianSummary(m2, s)), half_mahalanobis,
                    1e-10 * std::max(1.0, half_mahalanobis));
    }
}

TEST(KlDivergence, Errors) {
    EXPECT_THROW(GaussianSummary(Vector::Zero(2), Matrix::Zero(2, 2)), NumericalError);
    Matrix asym = Matrix::Identity(2, 2);
    asym(0, 1) = 0.5;
    EXPECT_THROW(GaussianSummary(Vector::Zero(2), asym), ValidationError);
    EXPECT_THROW(kl_divergence_gaussian(GaussianSummary(Vector::Zero(2), Matrix::Identity(2, 2)),
                                        GaussianSummary(Vector::Zero(3), Matrix::Identity(3, 3))),
                 DimensionError);
}

TEST(PredictiveP, EdgeCases) {
    std::vector<double> equal(200, 1.5);
    EXPECT_DOUBLE_EQ(predictive_p_value(1.5, equal), 1.0);
    std::vector<double> draws(999);
    std::iota(draws.begin(), draws.end(), 0.0);
    EXPECT_DOUBLE_EQ(predictive_p_value(1e6, draws), 1.0 / 1000.0);
    EXPECT_DOUBLE_EQ(predictive_p_value(-1.0, draws), 1.0);
    EXPECT_DOUBLE_EQ(predictive_p_value(500.0, draws), 500.0 / 1000.0);
    EXPECT_THROW(predictive_p_value(0.0, std::vector<double>(99, 0.0)), ValidationError);
    EXPECT_THROW(predictive_p_value(0.0, std::vector<double>{}), ValidationError);
}

TEST(PredictiveP, MonotoneInObserved) {
    Rng rng(84);
    std::vector<double> draws;
    for (int i = 0; i < 500; ++i) draws.push_back(rng.normal());
    double previous = 1.0;
    for (double obs = -4; obs <= 4; obs += 0.01) {
        const double p = predictive_p_value(obs, draws);
        EXPECT_LE(p, previous);
        EXPECT_GT(p, 0.0);
        EXPECT_LE(p, 1.0);
        previous = p;
    }
}

TEST(PredictiveP, UniformUnderTheNull) {
    // Statistic = sample mean of 10 N(0,1) values; reference draws from the same model.
    Rng rng(85);
    auto stat = [&] {
        double s = 0;
        for (int i = 0; i < 10; ++i) s += rng.normal();
        return s / 10;
    };
    std::vector<double> p;
    for (int r = 0; r < 200; ++r) {
        const double obs = stat();
        std::vector<double> draws;
        for (int i = 0; i < 199; ++i) draws.push_back(stat());
        p.push_back(predictive_p_value(obs, draws));
    }
    const double d = test::ks_statistic(p, [](double x) { return std::clamp(x, 0.0, 1.0); });
    EXPECT_GT(test::ks_p_value(d, p.size()), 0.01);
}

ChainSettings quick_settings() {
    ChainSettings s;
    s.n_samples = 2500;
    s.burn_in = 500;
    return s;
}

TEST(TaxaTest, Validation) {
    const auto a = simulate_objects(ShapeTemplate::convex_quad(), 20, 1.0, std::nullopt, 1);
    const auto b = simulate_objects(ShapeTemplate::triangle(), 20, 1.0, std::nullopt, 2);
    EXPECT_THROW(taxa_test(a, a, 0.0, quick_settings()), ValidationError);
    EXPECT_THROW(taxa_test(a, b, 0.5, quick_settings()), DimensionError);
    TaxaTestOptions opts;
    opts.p_value_replicates = 50;
    EXPECT_THROW(taxa_test(a, a, 0.5, quick_settings(), opts), ValidationError);
}

TEST(TaxaTest, HugeThresholdAlwaysH0) {
    const auto a = simulate_objects(ShapeTemplate::convex_quad(), 50, 1.5, std::nullopt, 3);
    const auto b = simulate_objects(ShapeTemplate::concave_quad(), 50, 0.8, std::nullopt, 4);
    const auto r = taxa_test(a, b, 1e9, quick_settings());
    EXPECT_EQ(r.decision, Decision::h0);
    EXPECT_EQ(r.threshold, 1e9);
    EXPECT_FALSE(r.p_value.has_value());
}

TEST(TaxaTest, DifferentVariancesGiveH1) {
    const auto a = simulate_objects(ShapeTemplate::convex_quad(), 200, 1.5, std::nullopt, 5);
    const auto b = simulate_objects(ShapeTemplate::convex_quad(), 200, 0.8, std::nullopt, 6);
    const auto r = taxa_test(a, b, 0.2, quick_settings());
    EXPECT_EQ(r.decision, Decision::h1);
    EXPECT_NEAR(r.sigma_a, 1.5, 0.15);
    EXPECT_NEAR(r.sigma_b, 0.8, 0.08);
    // With equal means the statistic is close to the isotropic variance-only KL.
    const double ratio = (r.sigma_b * r.sigma_b) / (r.sigma_a * r.sigma_a);
    const double variance_part = 0.5 * 8 * (ratio - 1 - std::log(ratio));
    EXPECT_GE(r.statistic, variance_part - 1e-9);
    EXPECT_LT(r.statistic, variance_part + 0.5);
}

TEST(TaxaTest, SplitHalvesOfOnePopulationGiveH0) {
    const auto pop = simulate_objects(ShapeTemplate::convex_quad(), 200, 1.0, std::nullopt, 7);
    int h0 = 0;
    for (int rep = 0; rep < 100; ++rep) {
        Rng rng(derive_seed(99, static_cast<std::uint64_t>(rep)));
        const auto [x, y] = split_half(pop, rng);
        TaxaTestOptions opts;
        opts.seed = static_cast<std::uint64_t>(rep);
        ChainSettings s;
        s.n_samples = 1500;
        s.burn_in = 300;
        if (taxa_test(x, y, 0.5, s, opts).decision == Decision::h0) ++h0;
    }
    EXPECT_GE(h0, 95);
}

TEST(TaxaTest, DecisionInvariantToSpecimenOrder) {
    const auto a = simulate_objects(ShapeTemplate::convex_quad(), 60, 1.2, std::nullopt, 8);
    const auto b = simulate_objects(ShapeTemplate::convex_quad(), 60, 0.9, std::nullopt, 9);
    std::vector<Matrix> ra = a.specimens(), rb = b.specimens();
    std::reverse(ra.begin(), ra.end());
    std::rotate(rb.begin(), rb.begin() + 17, rb.end());
    const auto r1 = taxa_test(a, b, 0.3, quick_settings());
    const auto r2 = taxa_test(ObjectSet(ra), ObjectSet(rb), 0.3, quick_settings());
    EXPECT_EQ(r1.decision, r2.decision);
    EXPECT_NEAR(r1.statistic, r2.statistic, 0.05 * r1.statistic);
}

TEST(TaxaTest, PredictivePValues) {
    const auto a = simulate_objects(ShapeTemplate::convex_quad(), 40, 1.0, std::nullopt, 10);
    const auto b = simulate_objects(ShapeTemplate::convex_quad(), 40, 1.0, std::nullopt, 11);
    ChainSettings s;
    s.n_samples = 800;
    s.burn_in = 200;
    TaxaTestOptions opts;
    opts.p_value_replicates = 100;
    const auto post = taxa_test(a, b, 0.5, s, opts);
    ASSERT_TRUE(post.p_value.has_value());
    EXPECT_GT(*post.p_value, 0.0);
    EXPECT_LE(*post.p_value, 1.0);
    opts.source = PredictiveSource::prior;
    s.prior = PriorSpec::paper(0.01, 5.0);
    const auto prior = taxa_test(a, b, 0.5, s, opts);
    ASSERT_TRUE(prior.p_value.has_value());
    EXPECT_GT(*prior.p_value, 0.0);
    EXPECT_LE(*prior.p_value, 1.0);
}

TEST(TaxaTest, CalibratedThresholdSitsAboveTheNullBulk) {
    const auto a = simulate_objects(ShapeTemplate::convex_quad(), 80, 1.0, std::nullopt, 12);
    const auto b = simulate_objects(ShapeTemplate::convex_quad(), 80, 1.0, std::nullopt, 13);
    ChainSettings s;
    s.n_samples = 1000;
    s.burn_in = 200;
    const double eps = calibrate_epsilon(a, b, s, 10, 3);
    EXPECT_GT(eps, 0.0);
    EXPECT_EQ(eps, calibrate_epsilon(a, b, s, 10, 3));
    EXPECT_THROW(calibrate_epsilon(a, b, s, 0, 3), ValidationError);
}

TEST(Quantile, TypeSeven) {
    EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4, 5}, 0.95), 4.8);
    EXPECT_DOUBLE_EQ(quantile({7}, 0.95), 7);
    EXPECT_THROW(quantile({}, 0.5), ValidationError);
}

TEST(BayesFactor, RejectsTooFewDraws) {
    const auto a = simulate_objects(ShapeTemplate::convex_quad(), 5, 0.5, std::nullopt, 1);
    EXPECT_THROW(bayes_factor_mc(a, a, PriorSpec::paper(), 10, 1), ValidationError);
}

TEST(BayesFactor, IdenticalModelsGiveUnitFactor) {
    const auto a = simulate_objects(ShapeTemplate::triangle(), 3, 0.3, std::nullopt, 2);
    const auto b = simulate_objects(ShapeTemplate::triangle(), 3, 0.3, std::nullopt, 3);
    BayesFactorOptions opts;
    opts.denominator = MarginalModel::common_variance;
    const auto r = bayes_factor_mc(a, b, PriorSpec::paper(0.01, 1.0), 100000, 4, opts);
    EXPECT_LT(std::abs(r.log_bayes_factor), 0.1);
    EXPECT_FALSE(r.high_variance);
    opts.numerator = opts.denominator = MarginalModel::mixture;
    opts.weights = MixtureWeights::dirichlet;
    EXPECT_LT(std::abs(bayes_factor_mc(a, b, PriorSpec::paper(0.01, 1.0), 100000, 5, opts).log_bayes_factor), 0.1);
}

TEST(BayesFactor, CommonVarianceDataFavourTheCommonModel) {
    int favoured = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const auto a = simulate_objects(ShapeTemplate::convex_quad(), 10, 0.5, std::nullopt, derive_seed(rep, 0));
        const auto b = simulate_objects(ShapeTemplate::concave_quad(), 10, 0.5, std::nullopt, derive_seed(rep, 1));
        const auto r = bayes_factor_mc(a, b, PriorSpec::paper(0.01, 1.0), 5000, static_cast<std::uint64_t>(rep));
        if (r.bayes_factor > 1.0) ++favoured;
    }
    EXPECT_GE(favoured, 90);
}

TEST(BayesFactor, DeterministicPerSeed) {
    const auto a = simulate_objects(ShapeTemplate::convex_quad(), 6, 0.5, std::nullopt, 1);
    const auto b = simulate_objects(ShapeTemplate::convex_quad(), 6, 0.7, std::nullopt, 2);
    const auto r1 = bayes_factor_mc(a, b, PriorSpec::paper(0.01, 2.0), 2000, 9);
    const auto r2 = bayes_factor_mc(a, b, PriorSpec::paper(0.01, 2.0), 2000, 9);
    EXPECT_EQ(r1.log_bayes_factor, r2.log_bayes_factor);
    EXPECT_GE(r1.relative_se, 0.0);
    EXPECT_EQ(r1.n_mc, 2000);
}

TEST(BayesFactor, LogSumExpIsStable) {
    EXPECT_NEAR(detail::log_sum_exp({-1000.0, -1000.0}), -1000.0 + std::log(2.0), 1e-12);
    EXPECT_THROW(detail::summarize_log_weights({kNegInf, kNegInf}), NumericalError);
}

}  // namespace
}  // namespace bpa
