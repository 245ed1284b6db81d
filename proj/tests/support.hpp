#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "bpa/geometry.hpp"
#include "bpa/random.hpp"

namespace bpa::test {

/// Kolmogorov-Smirnov statistic of a sample against a continuous CDF.
inline double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf) {
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double f = cdf(sample[i]);
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

/// Asymptotic Kolmogorov tail probability with Stephens' small-sample correction.
inline double ks_p_value(double d, std::size_t n) {
    const double rn = std::sqrt(static_cast<double>(n));
    const double lambda = (rn + 0.12 + 0.11 / rn) * d;
    if (lambda < 0.2) return 1.0;
    double q = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
        q += term;
        if (std::abs(term) < 1e-16) break;
    }
    return std::clamp(q, 0.0, 1.0);
}

inline Matrix random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

/// Random transform with |c_j| <= 5, b in [0.2, 3] and angles away from the wrap point.
inline SimilarityTransform random_transform(int dim, Rng& rng) {
    SimilarityTransform t;
    t.c = Vector(dim);
    for (int j = 0; j < dim; ++j) t.c(j) = rng.uniform(-5.0, 5.0);
    t.b = rng.uniform(0.2, 3.0);
    if (dim == 2) {
        t.rotation = RotationSpec::planar(rng.uniform(-3.0, 3.0));
    } else {
        t.rotation = RotationSpec::spatial(rng.uniform(-3.0, 3.0), rng.uniform(-1.4, 1.4), rng.uniform(-3.0, 3.0));
    }
    return t;
}

inline double mean(const Vector& v) { return v.mean(); }

inline double sd(const Vector& v) {
    const double m = v.mean();
    return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

/// Number of times a trace crosses its own mean.
inline int mean_crossings(const Vector& v) {
    const double m = v.mean();
    int crossings = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if ((v(i - 1) - m) * (v(i) - m) < 0.0) ++crossings;
    return crossings;
}

}  // namespace bpa::test
