#pragma once

// Classical full Procrustes fitting.
//
// The fit of w onto z minimises ||w - 1 c^T - b z R^T||^2 over translation c,
// dilation b and proper rotation R. In 2D the minimiser has the complex
// closed form b e^{i theta} = <z, w> / <z, z> on centred coordinates; in 3D
// it comes from the SVD of the cross-covariance with the sign of the last
// singular direction flipped when needed so that det R = +1.

#include <Eigen/SVD>

#include <cmath>
#include <vector>

#include "bpa/config.hpp"
#include "bpa/errors.hpp"
#include "bpa/geometry.hpp"

namespace bpa {

struct FitResult {
    SimilarityTransform transform;
    /// Residual sum of squares at the optimum.
    double sse = 0.0;
    /// Full Procrustes distance between the pre-shapes of the two configurations.
    double distance = 0.0;
};

namespace detail {

struct ScaledRotation {
    Matrix rotation;
    /// max over proper rotations of <target, source R^T>
    double inner = 0.0;
};

// Proper rotation R maximising <target, source R^T>. Neither input is centred here.
inline ScaledRotation best_rotation(const Matrix& target, const Matrix& source) {
    if (target.cols() == 2) {
        double re = 0.0;
        double im = 0.0;
        for (Eigen::Index i = 0; i < target.rows(); ++i) {
            re += source(i, 0) * target(i, 0) + source(i, 1) * target(i, 1);
            im += source(i, 0) * target(i, 1) - source(i, 1) * target(i, 0);
        }
        return {rotation_2d(std::atan2(im, re)), std::hypot(re, im)};
    }
    const Matrix cross = target.transpose() * source;
    Eigen::JacobiSVD<Matrix> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Vector signs = Vector::Ones(target.cols());
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) signs(target.cols() - 1) = -1.0;
    const Matrix r = svd.matrixU() * signs.asDiagonal() * svd.matrixV().transpose();
    return {r, svd.singularValues().dot(signs)};
}

inline void require_same_shape(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("configurations differ in landmark count or dimension");
}

}  // namespace detail

/// Least-squares similarity fit of `source` onto `target` for raw coordinate matrices.
inline FitResult fit_coordinates(const Matrix& target, const Matrix& source) {
    detail::require_same_shape(target, source);
    detail::require_dimension(target.cols());
    const Eigen::RowVectorXd target_mean = target.colwise().mean();
    const Eigen::RowVectorXd source_mean = source.colwise().mean();
    const Matrix tc = target.rowwise() - target_mean;
    const Matrix sc = source.rowwise() - source_mean;
    const double source_ss = sc.squaredNorm();
    if (!(std::sqrt(source_ss) > kTol.degenerate_norm * std::max(1.0, source.norm())))
        throw DegenerateShapeError("cannot fit onto a configuration whose landmarks all coincide");

    const auto rot = detail::best_rotation(tc, sc);
    const double b = rot.inner / source_ss;
    if (!(b > 0.0)) throw DegenerateShapeError("target has no shape component; the fitted dilation is zero");

    FitResult fit;
    fit.transform.b = b;
    fit.transform.rotation = rotation_from_matrix(rot.rotation);
    fit.transform.c = (target_mean - b * source_mean * rot.rotation.transpose()).transpose();
    const Matrix residual = target - apply_transform(source, fit.transform);
    fit.sse = residual.squaredNorm();
    const double target_ss = tc.squaredNorm();
    if (target_ss > 0.0) {
        const double cosine = rot.inner / std::sqrt(target_ss * source_ss);
        fit.distance = (tc / std::sqrt(target_ss) - cosine * (sc / std::sqrt(source_ss)) * rot.rotation.transpose()).norm();
    }
    return fit;
}

/// Full Procrustes fit of z onto w: argmin over (c, b, theta) of ||w - c 1 - b R z||^2.
inline FitResult full_procrustes_fit(const LandmarkConfiguration& w, const LandmarkConfiguration& z) {
    return fit_coordinates(w.points(), z.points());
}

/// Full Procrustes distance between two pre-shapes: sqrt(1 - s^2) where s is the
/// largest attainable <w, z R^T>. Lies in [0, 1] and is symmetric.
///
/// Evaluated as the residual norm ||w - s z R^T||, which equals sqrt(1 - s^2)
/// for unit-norm inputs without the cancellation near s = 1.
inline double full_procrustes_distance(const PreShape& w, const PreShape& z) {
    detail::require_same_shape(w.points(), z.points());
    const auto rot = detail::best_rotation(w.points(), z.points());
    return std::min(1.0, (w.points() - rot.inner * z.points() * rot.rotation.transpose()).norm());
}

struct MeanShapeResult {
    PreShape shape;
    int iterations = 0;
    bool converged = false;
};

/// Generalised Procrustes mean pre-shape.
///
/// Starts from the first specimen, repeatedly fits every pre-shape onto the
/// current mean (scale and rotation) and renormalises the average. The
/// converged mean is finally rotated onto the plain average of the unaligned
/// pre-shapes, which fixes its orientation independently of specimen order.
/// Hitting max_iter is reported through `converged`, not thrown.
inline MeanShapeResult mean_shape(const ObjectSet& objects, int max_iter = kDefaults.mean_shape_max_iter,
                                  double tol = kDefaults.mean_shape_tol) {
    if (max_iter < 1) throw ValidationError("max_iter must be positive");
    if (!(tol > 0.0)) throw ValidationError("tol must be positive");
    const ObjectSet pre = to_preshape(objects);
    const int source_p = objects.space() == Space::configuration ? objects.landmarks() : pre.landmarks() + 1;

    Matrix mean = pre[0];
    int iterations = 0;
    bool converged = false;
    while (iterations < max_iter) {
        ++iterations;
        Matrix sum = Matrix::Zero(mean.rows(), mean.cols());
        for (const auto& s : pre.specimens()) {
            const auto rot = detail::best_rotation(mean, s);
            sum += rot.inner * s * rot.rotation.transpose();
        }
        const double norm = sum.norm();
        if (!(norm > 0.0)) throw DegenerateShapeError("mean shape vanished during alignment");
        sum /= norm;
        const double moved = (sum - mean).norm();
        mean = std::move(sum);
        if (moved < tol) {
            converged = true;
            break;
        }
    }

    Matrix reference = Matrix::Zero(mean.rows(), mean.cols());
    for (const auto& s : pre.specimens()) reference += s;
    if (reference.norm() > 1e-8 * pre.size()) {
        const auto rot = detail::best_rotation(reference, mean);
        mean = mean * rot.rotation.transpose();
    }
    mean /= mean.norm();
    return {PreShape(std::move(mean), source_p), iterations, converged};
}

/// Reference object for regression: the mean pre-shape re-embedded as a
/// centred p x d configuration scaled to the average centroid size. For
/// pre-shape data it is the mean pre-shape itself.
inline Matrix registration_object(const ObjectSet& objects) {
    const auto mean = mean_shape(objects).shape;
    if (objects.space() == Space::preshape) return mean.points();
    double size = 0.0;
    for (const auto& s : objects.specimens()) size += centroid_size(s);
    size /= objects.size();
    return embed(mean).points() * size;
}

/// Classical estimate of one transform shared by every specimen: minimising
/// sum_k ||w_k - c - b R z||^2 is the same as fitting z onto the average of the w_k.
inline FitResult shared_fit(const ObjectSet& objects, const Matrix& reference) {
    return fit_coordinates(objects.arithmetic_mean(), reference);
}

/// Per-specimen classical fits of `reference` onto each specimen.
inline std::vector<FitResult> specimen_fits(const ObjectSet& objects, const Matrix& reference) {
    std::vector<FitResult> fits;
    fits.reserve(objects.specimens().size());
    for (const auto& s : objects.specimens()) fits.push_back(fit_coordinates(s, reference));
    return fits;
}

}  // namespace bpa
