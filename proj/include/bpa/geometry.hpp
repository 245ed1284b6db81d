#pragma once

// Landmark containers, the Helmert submatrix, pre-shapes and rotations.
//
// Coordinates are stored row-wise: a configuration of p landmarks in d
// dimensions is a p x d matrix whose i-th row is landmark i.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "bpa/config.hpp"
#include "bpa/errors.hpp"

namespace bpa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kPi = std::numbers::pi;

/// Maps an angle onto (-pi, pi].
inline double wrap_angle(double theta) {
    if (!std::isfinite(theta)) throw ValidationError("angle must be finite");
    double r = std::remainder(theta, 2.0 * kPi);  // [-pi, pi]
    if (r <= -kPi) r += 2.0 * kPi;
    return r;
}

inline bool in_angle_range(double theta) { return theta > -kPi && theta <= kPi; }

namespace detail {

inline void require_dimension(Eigen::Index d) {
    if (d != 2 && d != 3) throw DimensionError("landmark dimension must be 2 or 3, got " + std::to_string(d));
}

inline void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw ValidationError(std::string(what) + " contains non-finite coordinates");
}

}  // namespace detail

/// Rows minus their column means.
inline Matrix centered(const Matrix& points) {
    return points.rowwise() - points.colwise().mean();
}

/// Root sum of squared distances of the landmarks from their centroid.
inline double centroid_size(const Matrix& points) { return centered(points).norm(); }

/// One specimen: p >= 2 landmarks in d in {2, 3} dimensions.
class LandmarkConfiguration {
public:
    explicit LandmarkConfiguration(Matrix points) : points_(std::move(points)) {
        if (points_.rows() < 2) throw DimensionError("a configuration needs at least 2 landmarks");
        detail::require_dimension(points_.cols());
        detail::require_finite(points_, "configuration");
    }

    const Matrix& points() const noexcept { return points_; }
    int landmarks() const noexcept { return static_cast<int>(points_.rows()); }
    int dim() const noexcept { return static_cast<int>(points_.cols()); }

    friend bool operator==(const LandmarkConfiguration& a, const LandmarkConfiguration& b) {
        return a.points_.rows() == b.points_.rows() && a.points_.cols() == b.points_.cols() &&
               a.points_ == b.points_;
    }

private:
    Matrix points_;
};

/// Coordinate space of the specimens held in an ObjectSet.
enum class Space { configuration, preshape };

inline const char* to_string(Space s) { return s == Space::configuration ? "configuration" : "preshape"; }

/// n >= 1 specimens sharing one landmark scheme (a p x d x n array).
///
/// In pre-shape space each specimen holds p-1 Helmertized rows of unit
/// Frobenius norm, so a single row is allowed there.
class ObjectSet {
public:
    explicit ObjectSet(std::vector<Matrix> specimens, Space space = Space::configuration)
        : specimens_(std::move(specimens)), space_(space) {
        if (specimens_.empty()) throw ValidationError("an object set needs at least one specimen");
        const auto p = specimens_.front().rows();
        const auto d = specimens_.front().cols();
        detail::require_dimension(d);
        if (p < (space_ == Space::configuration ? 2 : 1)) throw DimensionError("too few landmarks per specimen");
        for (const auto& s : specimens_) {
            if (s.rows() != p || s.cols() != d) throw DimensionError("specimens differ in landmark count or dimension");
            detail::require_finite(s, "specimen");
        }
    }

    static ObjectSet from_configurations(const std::vector<LandmarkConfiguration>& configs) {
        std::vector<Matrix> m;
        m.reserve(configs.size());
        for (const auto& c : configs) m.push_back(c.points());
        return ObjectSet(std::move(m));
    }

    int size() const noexcept { return static_cast<int>(specimens_.size()); }
    int landmarks() const noexcept { return static_cast<int>(specimens_.front().rows()); }
    int dim() const noexcept { return static_cast<int>(specimens_.front().cols()); }
    Space space() const noexcept { return space_; }

    const Matrix& operator[](std::size_t k) const { return specimens_[k]; }
    const std::vector<Matrix>& specimens() const noexcept { return specimens_; }

    LandmarkConfiguration configuration(std::size_t k) const { return LandmarkConfiguration(specimens_.at(k)); }

    /// Element-wise average of the specimens.
    Matrix arithmetic_mean() const {
        Matrix sum = Matrix::Zero(specimens_.front().rows(), specimens_.front().cols());
        for (const auto& s : specimens_) sum += s;
        return sum / static_cast<double>(specimens_.size());
    }

    friend bool operator==(const ObjectSet& a, const ObjectSet& b) {
        if (a.space_ != b.space_ || a.specimens_.size() != b.specimens_.size()) return false;
        for (std::size_t k = 0; k < a.specimens_.size(); ++k) {
            const auto& x = a.specimens_[k];
            const auto& y = b.specimens_[k];
            if (x.rows() != y.rows() || x.cols() != y.cols() || x != y) return false;
        }
        return true;
    }

private:
    std::vector<Matrix> specimens_;
    Space space_;
};

/// The (p-1) x p Helmert submatrix: orthonormal rows, each summing to zero.
/// Row k (1-based) holds k entries 1/sqrt(k(k+1)), then -k/sqrt(k(k+1)), then zeros.
inline Matrix helmert_submatrix(int p) {
    if (p < 2) throw DimensionError("Helmert submatrix needs p >= 2");
    Matrix h = Matrix::Zero(p - 1, p);
    for (int k = 1; k < p; ++k) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(k) * (k + 1));
        for (int j = 0; j < k; ++j) h(k - 1, j) = scale;
        h(k - 1, k) = -static_cast<double>(k) * scale;
    }
    return h;
}

/// Configuration with location and scale removed: Hz / ||Hz||.
class PreShape {
public:
    PreShape(Matrix points, int source_p) : points_(std::move(points)), source_p_(source_p) {
        if (points_.rows() != source_p_ - 1) throw DimensionError("pre-shape must have p-1 rows");
        detail::require_dimension(points_.cols());
        detail::require_finite(points_, "pre-shape");
        if (std::abs(points_.norm() - 1.0) > kTol.unit_norm) throw ValidationError("pre-shape must have unit norm");
    }

    const Matrix& points() const noexcept { return points_; }
    int source_landmarks() const noexcept { return source_p_; }
    int dim() const noexcept { return static_cast<int>(points_.cols()); }

private:
    Matrix points_;
    int source_p_;
};

/// Helmert-multiplies and normalises a p x d coordinate matrix.
inline Matrix helmertize(const Matrix& points) {
    const Matrix hz = helmert_submatrix(static_cast<int>(points.rows())) * points;
    const double norm = hz.norm();
    if (!(norm > kTol.degenerate_norm * std::max(1.0, points.norm()))) throw DegenerateShapeError("all landmarks coincide; the shape is undefined");
    return hz / norm;
}

inline PreShape to_preshape(const LandmarkConfiguration& config) {
    return PreShape(helmertize(config.points()), config.landmarks());
}

/// Re-embeds a pre-shape as a centred p x d configuration (H^T z+), with unit centroid size.
inline LandmarkConfiguration embed(const PreShape& shape) {
    return LandmarkConfiguration(helmert_submatrix(shape.source_landmarks()).transpose() * shape.points());
}

/// Pre-shapes of every specimen, as an ObjectSet in pre-shape space.
inline ObjectSet to_preshape(const ObjectSet& objects) {
    if (objects.space() == Space::preshape) return objects;
    std::vector<Matrix> out;
    out.reserve(objects.specimens().size());
    for (const auto& s : objects.specimens()) out.push_back(helmertize(s));
    return ObjectSet(std::move(out), Space::preshape);
}

/// Rotation angles: one angle in 2D, Euler angles (x, y, z) in 3D. Stored wrapped to (-pi, pi].
class RotationSpec {
public:
    static RotationSpec planar(double theta) { return RotationSpec(2, {wrap_angle(theta), 0.0, 0.0}); }
    static RotationSpec spatial(double theta_x, double theta_y, double theta_z) {
        return RotationSpec(3, {wrap_angle(theta_x), wrap_angle(theta_y), wrap_angle(theta_z)});
    }
    static RotationSpec identity(int dim) {
        detail::require_dimension(dim);
        return RotationSpec(dim, {0.0, 0.0, 0.0});
    }
    /// From dim() angles: theta in 2D, (x, y, z) in 3D.
    static RotationSpec from_angles(int dim, const double* angles) {
        detail::require_dimension(dim);
        return dim == 2 ? planar(angles[0]) : spatial(angles[0], angles[1], angles[2]);
    }

    int dim() const noexcept { return dim_; }
    /// Number of free angles: 1 in 2D, 3 in 3D.
    int angle_count() const noexcept { return dim_ == 2 ? 1 : 3; }
    double angle(int i) const { return angles_.at(static_cast<std::size_t>(i)); }
    double theta() const noexcept { return angles_[0]; }

private:
    RotationSpec(int dim, std::array<double, 3> angles) : dim_(dim), angles_(angles) {}

    int dim_;
    std::array<double, 3> angles_;
};

inline int rotation_angle_count(int dim) { return dim == 2 ? 1 : 3; }

/// Counter-clockwise rotation by theta: maps (1, 0) to (cos, sin).
inline Eigen::Matrix2d rotation_2d(double theta) {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    Eigen::Matrix2d r;
    r << c, -s, s, c;
    return r;
}

inline Eigen::Matrix3d rotation_x(double t) {
    const double c = std::cos(t), s = std::sin(t);
    Eigen::Matrix3d r;
    r << 1, 0, 0, 0, c, -s, 0, s, c;
    return r;
}

inline Eigen::Matrix3d rotation_y(double t) {
    const double c = std::cos(t), s = std::sin(t);
    Eigen::Matrix3d r;
    r << c, 0, s, 0, 1, 0, -s, 0, c;
    return r;
}

inline Eigen::Matrix3d rotation_z(double t) {
    const double c = std::cos(t), s = std::sin(t);
    Eigen::Matrix3d r;
    r << c, -s, 0, s, c, 0, 0, 0, 1;
    return r;
}

/// R_z * R_y * R_x in 3D.
inline Eigen::Matrix3d rotation_3d(double theta_x, double theta_y, double theta_z) {
    return rotation_z(theta_z) * rotation_y(theta_y) * rotation_x(theta_x);
}

inline Matrix rotation_matrix(const RotationSpec& spec) {
    if (spec.dim() == 2) return rotation_2d(spec.theta());
    return rotation_3d(spec.angle(0), spec.angle(1), spec.angle(2));
}

/// Angles reproducing a proper rotation matrix under rotation_matrix().
/// In 3D at gimbal lock (cos theta_y == 0) theta_x is set to zero.
inline RotationSpec rotation_from_matrix(const Matrix& r) {
    if (r.rows() != r.cols()) throw DimensionError("rotation matrix must be square");
    detail::require_dimension(r.rows());
    if (r.rows() == 2) return RotationSpec::planar(std::atan2(r(1, 0), r(0, 0)));
    const double sy = std::clamp(-r(2, 0), -1.0, 1.0);
    const double theta_y = std::asin(sy);
    const double cy = std::sqrt(r(2, 1) * r(2, 1) + r(2, 2) * r(2, 2));
    if (cy > kTol.gimbal_lock) {
        return RotationSpec::spatial(std::atan2(r(2, 1), r(2, 2)), std::atan2(-r(2, 0), cy), std::atan2(r(1, 0), r(0, 0)));
    }
    // R = R_z(z) R_y(+-pi/2) R_x(x) only determines z -+ x; put it all in z.
    return RotationSpec::spatial(0.0, theta_y, std::atan2(-r(0, 1), r(1, 1)));
}

/// Translation c, dilation b > 0 and a rotation; maps each landmark z to c + b R z.
struct SimilarityTransform {
    Vector c;
    double b = 1.0;
    RotationSpec rotation = RotationSpec::identity(2);

    static SimilarityTransform identity(int dim) {
        return {Vector::Zero(dim), 1.0, RotationSpec::identity(dim)};
    }

    int dim() const noexcept { return rotation.dim(); }

    void validate() const {
        if (!(b > 0.0) || !std::isfinite(b)) throw ValidationError("dilation b must be positive and finite");
        if (c.size() != rotation.dim()) throw DimensionError("translation and rotation dimensions differ");
        if (!c.allFinite()) throw ValidationError("translation must be finite");
    }
};

/// Applies c + b R z to every row of a coordinate matrix.
inline Matrix apply_transform(const Matrix& points, const SimilarityTransform& t) {
    t.validate();
    if (points.cols() != t.dim()) throw DimensionError("transform and configuration dimensions differ");
    Matrix out = t.b * points * rotation_matrix(t.rotation).transpose();
    out.rowwise() += t.c.transpose();
    return out;
}

inline LandmarkConfiguration apply_transform(const LandmarkConfiguration& config, const SimilarityTransform& t) {
    return LandmarkConfiguration(apply_transform(config.points(), t));
}

/// (-(1/b) R^T c, 1/b, R^T).
inline SimilarityTransform inverse(const SimilarityTransform& t) {
    t.validate();
    const Matrix rt = rotation_matrix(t.rotation).transpose();
    SimilarityTransform inv;
    inv.b = 1.0 / t.b;
    inv.c = -(1.0 / t.b) * (rt * t.c);
    inv.rotation = t.dim() == 2 ? RotationSpec::planar(-t.rotation.theta()) : rotation_from_matrix(rt);
    return inv;
}

}  // namespace bpa
