#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bpa/classical.hpp"
#include "support.hpp"

namespace bpa {
namespace {

double angle_error(double a, double b) { return std::abs(wrap_angle(a - b)); }

TEST(FullProcrustesFit, RecoversKnownPlanarTransform) {
    Matrix z(4, 2);
    z << 0, 0, 4, 0, 5, 3, 1, 4;
    SimilarityTransform t;
    t.c = Eigen::Vector2d(1, -2);
    t.b = 0.5;
    t.rotation = RotationSpec::planar(0.7);
    const auto fit = full_procrustes_fit(LandmarkConfiguration(apply_transform(z, t)), LandmarkConfiguration(z));
    EXPECT_LT((fit.transform.c - t.c).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_NEAR(fit.transform.b, 0.5, 1e-8);
    EXPECT_LT(angle_error(fit.transform.rotation.theta(), 0.7), 1e-8);
    EXPECT_LT(fit.sse, 1e-12);
}

TEST(FullProcrustesFit, ConstructAndRecover) {
    Rng rng(21);
    for (int d : {2, 3}) {
        for (int trial = 0; trial < 100; ++trial) {
            const Matrix z = test::random_matrix(6, d, rng);
            const auto t = test::random_transform(d, rng);
            const auto fit = fit_coordinates(apply_transform(z, t), z);
            EXPECT_LT((fit.transform.c - t.c).cwiseAbs().maxCoeff(), 1e-8);
            EXPECT_NEAR(fit.transform.b, t.b, 1e-8);
            for (int j = 0; j < t.rotation.angle_count(); ++j)
                EXPECT_LT(angle_error(fit.transform.rotation.angle(j), t.rotation.angle(j)), 1e-8);
            EXPECT_LT(fit.sse, 1e-12);
        }
    }
}

TEST(FullProcrustesFit, SelfFitIsIdentity) {
    Rng rng(22);
    const Matrix z = test::random_matrix(5, 2, rng);
    const auto fit = fit_coordinates(z, z);
    EXPECT_LT(fit.transform.c.norm(), 1e-12);
    EXPECT_NEAR(fit.transform.b, 1.0, 1e-12);
    EXPECT_NEAR(fit.transform.rotation.theta(), 0.0, 1e-12);
    EXPECT_LT(fit.sse, 1e-20);
}

TEST(FullProcrustesFit, DegenerateSourceThrows) {
    EXPECT_THROW(fit_coordinates(Matrix::Ones(3, 2), Matrix::Constant(3, 2, 2.0)), DegenerateShapeError);
}

TEST(FullProcrustesFit, DimensionMismatchThrows) {
    EXPECT_THROW(fit_coordinates(Matrix::Ones(3, 2), Matrix::Ones(4, 2)), DimensionError);
}

TEST(FullProcrustesFit, ExcludesReflections) {
    Rng rng(23);
    const Matrix z = test::random_matrix(6, 3, rng);
    Matrix mirrored = z;
    mirrored.col(2) *= -1.0;
    const auto fit = fit_coordinates(mirrored, z);
    EXPECT_NEAR(rotation_matrix(fit.transform.rotation).determinant(), 1.0, 1e-12);
    EXPECT_GT(fit.sse, 1e-6);
}

TEST(FullProcrustesFit, SseMatchesDirectResidualAndBeatsPerturbations) {
    Rng rng(24);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix z = test::random_matrix(5, 2, rng);
        const Matrix w = test::random_matrix(5, 2, rng);
        const auto fit = fit_coordinates(w, z);
        EXPECT_NEAR(fit.sse, (w - apply_transform(z, fit.transform)).squaredNorm(), 1e-12);
        for (int k = 0; k < 20; ++k) {
            SimilarityTransform t = fit.transform;
            t.c(0) += rng.uniform(-0.1, 0.1);
            t.b *= std::exp(rng.uniform(-0.1, 0.1));
            t.rotation = RotationSpec::planar(t.rotation.theta() + rng.uniform(-0.1, 0.1));
            EXPECT_GE((w - apply_transform(z, t)).squaredNorm(), fit.sse - 1e-12);
        }
    }
}

TEST(FullProcrustesFit, RefitOfFittedTargetIsIdentity) {
    Rng rng(25);
    for (int d : {2, 3}) {
        const Matrix z = test::random_matrix(6, d, rng);
        const Matrix w = test::random_matrix(6, d, rng);
        const auto fit = fit_coordinates(w, z);
        const auto again = fit_coordinates(apply_transform(z, fit.transform), apply_transform(z, fit.transform));
        EXPECT_LT(again.transform.c.norm(), 1e-8);
        EXPECT_NEAR(again.transform.b, 1.0, 1e-8);
        for (int j = 0; j < again.transform.rotation.angle_count(); ++j)
            EXPECT_LT(std::abs(again.transform.rotation.angle(j)), 1e-8);
    }
}

// Brute-force distance: scan theta on a grid, refine by golden section; for each
// theta the (c, b) part is an ordinary linear least-squares problem.
double brute_force_distance(const Matrix& w, const Matrix& z) {
    auto sse_at = [&](double theta) {
        const Matrix rz = z * rotation_2d(theta).transpose();
        Matrix design(w.size(), 3);
        Vector y(w.size());
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (int j = 0; j < 2; ++j) {
                const Eigen::Index r = i * 2 + j;
                design(r, 0) = j == 0;
                design(r, 1) = j == 1;
                design(r, 2) = rz(i, j);
                y(r) = w(i, j);
            }
        const Vector beta = design.colPivHouseholderQr().solve(y);
        return (design * beta - y).squaredNorm();
    };
    const int grid = 3600;
    double best_theta = 0.0, best = std::numeric_limits<double>::infinity();
    for (int g = 0; g < grid; ++g) {
        const double theta = -kPi + 2 * kPi * g / grid;
        const double v = sse_at(theta);
        if (v < best) best = v, best_theta = theta;
    }
    double lo = best_theta - 2 * kPi / grid, hi = best_theta + 2 * kPi / grid;
    const double phi = (std::sqrt(5.0) - 1) / 2;
    for (int it = 0; it < 200; ++it) {
        const double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
        if (sse_at(a) < sse_at(b)) {
            hi = b;
        } else {
            lo = a;
        }
    }
    return std::sqrt(std::min(best, sse_at(0.5 * (lo + hi))));
}

TEST(FullProcrustesDistance, MatchesBruteForceMinimiser) {
    Rng rng(26);
    for (int trial = 0; trial < 5; ++trial) {
        const PreShape a = to_preshape(LandmarkConfiguration(test::random_matrix(3, 2, rng)));
        const PreShape b = to_preshape(LandmarkConfiguration(test::random_matrix(3, 2, rng)));
        // Translation acts on configurations, so minimise over the re-embedded p x 2 forms.
        EXPECT_NEAR(full_procrustes_distance(a, b), brute_force_distance(embed(a).points(), embed(b).points()), 1e-8);
    }
}

TEST(FullProcrustesDistance, ZeroForIdenticalAndRotated) {
    Rng rng(27);
    const Matrix z = test::random_matrix(4, 2, rng);
    const PreShape a = to_preshape(LandmarkConfiguration(z));
    EXPECT_NEAR(full_procrustes_distance(a, a), 0.0, 1e-10);
    for (double theta : {0.3, 1.7, -2.9}) {
        const PreShape r = to_preshape(LandmarkConfiguration(z * rotation_2d(theta).transpose()));
        EXPECT_LT(full_procrustes_distance(a, r), 1e-10);
    }
}

TEST(FullProcrustesDistance, SymmetricAndBounded) {
    Rng rng(28);
    for (int trial = 0; trial < 100; ++trial) {
        const int d = trial % 2 ? 3 : 2;
        const PreShape a = to_preshape(LandmarkConfiguration(test::random_matrix(5, d, rng)));
        const PreShape b = to_preshape(LandmarkConfiguration(test::random_matrix(5, d, rng)));
        const double ab = full_procrustes_distance(a, b);
        EXPECT_NEAR(ab, full_procrustes_distance(b, a), 1e-10);
        EXPECT_GE(ab, 0.0);
        EXPECT_LE(ab, 1.0);
    }
}

TEST(FullProcrustesDistance, DimensionMismatchThrows) {
    Rng rng(29);
    const PreShape a = to_preshape(LandmarkConfiguration(test::random_matrix(3, 2, rng)));
    const PreShape b = to_preshape(LandmarkConfiguration(test::random_matrix(4, 2, rng)));
    EXPECT_THROW(full_procrustes_distance(a, b), DimensionError);
}

TEST(FullProcrustesDistance, NoiseIncreasesMedianDistance) {
    Rng rng(30);
    Matrix z(3, 2);
    z << 0, 0, 1, 0, 0.5, 0.8;
    const PreShape target = to_preshape(LandmarkConfiguration(z));
    auto median_distance = [&](double sigma) {
        std::vector<double> d;
        for (int r = 0; r < 100; ++r) {
            const Matrix noisy = z + test::random_matrix(3, 2, rng, sigma);
            d.push_back(full_procrustes_distance(target, to_preshape(LandmarkConfiguration(noisy))));
        }
        std::nth_element(d.begin(), d.begin() + 50, d.end());
        return d[50];
    };
    const double zero = median_distance(0.0);
    const double small = median_distance(0.01);
    const double large = median_distance(0.1);
    EXPECT_LT(zero, small);
    EXPECT_LT(small, large);
}

TEST(MeanShape, IdenticalSpecimens) {
    Rng rng(31);
    const Matrix z = test::random_matrix(5, 2, rng);
    const auto result = mean_shape(ObjectSet({z, z, z}));
    EXPECT_TRUE(result.converged);
    EXPECT_LT((result.shape.points() - helmertize(z)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(MeanShape, IndependentOfSpecimenOrder) {
    Rng rng(32);
    for (int d : {2, 3}) {
        const Matrix a = test::random_matrix(5, d, rng);
        const Matrix b = test::random_matrix(5, d, rng);
        const auto ab = mean_shape(ObjectSet({a, b})).shape.points();
        const auto ba = mean_shape(ObjectSet({b, a})).shape.points();
        EXPECT_LT((ab - ba).norm(), 1e-8);
    }
    std::vector<Matrix> many;
    for (int k = 0; k < 12; ++k) many.push_back(test::random_matrix(6, 2, rng));
    const Matrix forward = mean_shape(ObjectSet(many)).shape.points();
    std::reverse(many.begin(), many.end());
    EXPECT_LT((forward - mean_shape(ObjectSet(many)).shape.points()).norm(), 1e-8);
}

TEST(MeanShape, NonConvergenceIsReportedNotThrown) {
    Rng rng(33);
    std::vector<Matrix> many;
    for (int k = 0; k < 10; ++k) many.push_back(test::random_matrix(6, 2, rng));
    const auto result = mean_shape(ObjectSet(many), 1, 1e-300);
    EXPECT_FALSE(result.converged);
    EXPECT_EQ(result.iterations, 1);
    EXPECT_NEAR(result.shape.points().norm(), 1.0, 1e-12);
}

TEST(MeanShape, MinimisesSummedSquaredDistance) {
    Rng rng(34);
    Matrix base(4, 2);
    base << 0, 0, 4, 0, 5, 3, 1, 4;
    std::vector<Matrix> s;
    for (int k = 0; k < 30; ++k) s.push_back(apply_transform(base + test::random_matrix(4, 2, rng, 0.3), test::random_transform(2, rng)));
    const ObjectSet set(s);
    const PreShape mean = mean_shape(set).shape;
    auto objective = [&](const PreShape& m) {
        double total = 0.0;
        for (const auto& x : s) total += std::pow(full_procrustes_distance(m, to_preshape(LandmarkConfiguration(x))), 2);
        return total;
    };
    const double best = objective(mean);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix perturbed = mean.points() + test::random_matrix(3, 2, rng, 0.02);
        EXPECT_GE(objective(PreShape(perturbed / perturbed.norm(), 4)), best - 1e-12);
    }
}

TEST(RegistrationObject, ScaledByMeanCentroidSize) {
    Rng rng(35);
    std::vector<Matrix> s;
    for (int k = 0; k < 5; ++k) s.push_back(test::random_matrix(4, 2, rng));
    const ObjectSet set(s);
    double size = 0.0;
    for (const auto& x : s) size += centroid_size(x);
    EXPECT_NEAR(centroid_size(registration_object(set)), size / 5.0, 1e-10);
}

TEST(SharedFit, MinimisesPooledResidual) {
    Rng rng(36);
    const Matrix z = test::random_matrix(5, 2, rng);
    std::vector<Matrix> s;
    for (int k = 0; k < 8; ++k) s.push_back(test::random_matrix(5, 2, rng));
    const ObjectSet set(s);
    const auto fit = shared_fit(set, z);
    auto pooled = [&](const SimilarityTransform& t) {
        const Matrix m = apply_transform(z, t);
        double total = 0.0;
        for (const auto& x : s) total += (x - m).squaredNorm();
        return total;
    };
    const double best = pooled(fit.transform);
    for (int trial = 0; trial < 50; ++trial) {
        SimilarityTransform t = fit.transform;
        t.c(1) += rng.uniform(-0.05, 0.05);
        t.b *= std::exp(rng.uniform(-0.05, 0.05));
        t.rotation = RotationSpec::planar(t.rotation.theta() + rng.uniform(-0.05, 0.05));
        EXPECT_GE(pooled(t), best - 1e-12);
    }
}

}  // namespace
}  // namespace bpa
