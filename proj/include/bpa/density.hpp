#pragma once

// Kernel density estimates of chain columns on a regular grid, for contour plots.
//
// Gaussian product kernel with Silverman's rule: h = 1.06 s n^{-1/5} for one
// column, h_j = s_j n^{-1/6} for two. Bandwidths never drop below
// kTol.bandwidth_floor, so a constant column yields a narrow spike rather
// than a division by zero. The grid spans the sample range padded by three
// bandwidths on each side.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "bpa/config.hpp"
#include "bpa/errors.hpp"
#include "bpa/geometry.hpp"
#include "bpa/posterior.hpp"

namespace bpa {

struct DensityGrid {
    std::string x_name;
    std::string y_name;  // empty for a single-column grid
    std::vector<double> xs;
    std::vector<double> ys;  // {0} for a single-column grid
    /// density(iy, ix)
    Matrix density;
    double bandwidth_x = 0.0;
    double bandwidth_y = 0.0;

    bool two_dimensional() const { return !y_name.empty(); }

    double cell_area() const {
        const double dx = xs.size() > 1 ? xs[1] - xs[0] : 1.0;
        const double dy = two_dimensional() && ys.size() > 1 ? ys[1] - ys[0] : 1.0;
        return dx * dy;
    }

    /// Riemann sum of the grid; close to 1 for a well-resolved grid.
    double total_mass() const { return density.sum() * cell_area(); }
};

namespace detail {

inline double sample_sd(const Vector& v) {
    const double m = v.mean();
    return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

inline std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
    return out;
}

// K(i, s) = phi((grid_i - sample_s) / h) / h
inline Matrix kernel_matrix(const std::vector<double>& grid, const Vector& samples, double h) {
    Matrix k(static_cast<Eigen::Index>(grid.size()), samples.size());
    const double norm = 1.0 / (h * std::sqrt(2.0 * kPi));
    for (Eigen::Index i = 0; i < k.rows(); ++i)
        for (Eigen::Index s = 0; s < k.cols(); ++s) {
            const double u = (grid[static_cast<std::size_t>(i)] - samples(s)) / h;
            k(i, s) = norm * std::exp(-0.5 * u * u);
        }
    return k;
}

}  // namespace detail

inline DensityGrid density_grid(const PosteriorChain& chain, const std::string& x_name,
                                const std::optional<std::string>& y_name, int resolution = 64) {
    if (resolution < 8) throw ValidationError("density grid resolution must be at least 8");
    if (chain.rows() < 10) throw ValidationError("density grid needs at least 10 samples");
    const Vector x = chain.values(x_name);
    const double n = static_cast<double>(x.size());

    DensityGrid grid;
    grid.x_name = x_name;
    if (!y_name) {
        grid.bandwidth_x = std::max(kTol.bandwidth_floor, 1.06 * detail::sample_sd(x) * std::pow(n, -0.2));
        grid.xs = detail::linspace(x.minCoeff() - 3 * grid.bandwidth_x, x.maxCoeff() + 3 * grid.bandwidth_x, resolution);
        grid.ys = {0.0};
        const Matrix kx = detail::kernel_matrix(grid.xs, x, grid.bandwidth_x);
        grid.density = (kx.rowwise().sum() / n).transpose();
        return grid;
    }

    const Vector y = chain.values(*y_name);
    grid.y_name = *y_name;
    const double factor = std::pow(n, -1.0 / 6.0);
    grid.bandwidth_x = std::max(kTol.bandwidth_floor, detail::sample_sd(x) * factor);
    grid.bandwidth_y = std::max(kTol.bandwidth_floor, detail::sample_sd(y) * factor);
    grid.xs = detail::linspace(x.minCoeff() - 3 * grid.bandwidth_x, x.maxCoeff() + 3 * grid.bandwidth_x, resolution);
    grid.ys = detail::linspace(y.minCoeff() - 3 * grid.bandwidth_y, y.maxCoeff() + 3 * grid.bandwidth_y, resolution);
    const Matrix kx = detail::kernel_matrix(grid.xs, x, grid.bandwidth_x);
    const Matrix ky = detail::kernel_matrix(grid.ys, y, grid.bandwidth_y);
    grid.density = ky * kx.transpose() / n;
    return grid;
}

}  // namespace bpa
