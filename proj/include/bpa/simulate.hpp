#pragma once

// Synthetic landmark populations.
//
// Specimen k is drawn from its own substream Rng(derive_seed(seed, k)), so a
// population can be generated in any order or in shards and still match.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bpa/classical.hpp"
#include "bpa/errors.hpp"
#include "bpa/geometry.hpp"
#include "bpa/random.hpp"

namespace bpa {

enum class TemplateKind { convex_quad, concave_quad, triangle, custom };

inline const char* to_string(TemplateKind k) {
    switch (k) {
        case TemplateKind::convex_quad: return "convex-quad";
        case TemplateKind::concave_quad: return "concave-quad";
        case TemplateKind::triangle: return "triangle";
        case TemplateKind::custom: return "custom";
    }
    return "?";
}

/// z-components of the cross products of consecutive polygon edges.
inline std::vector<double> turn_cross_products(const Matrix& polygon) {
    const auto p = polygon.rows();
    std::vector<double> out;
    for (Eigen::Index i = 0; i < p; ++i) {
        const Eigen::RowVector2d a = polygon.row((i + 1) % p).head<2>() - polygon.row(i).head<2>();
        const Eigen::RowVector2d b = polygon.row((i + 2) % p).head<2>() - polygon.row((i + 1) % p).head<2>();
        out.push_back(a(0) * b(1) - a(1) * b(0));
    }
    return out;
}

inline bool is_convex_polygon(const Matrix& polygon) {
    int pos = 0, neg = 0;
    for (double c : turn_cross_products(polygon)) (c > 0 ? pos : (c < 0 ? neg : pos))++;
    return pos == 0 || neg == 0;
}

inline int reflex_vertex_count(const Matrix& polygon) {
    int pos = 0, neg = 0;
    for (double c : turn_cross_products(polygon)) (c > 0 ? pos : neg)++;
    return std::min(pos, neg);
}

class ShapeTemplate {
public:
    /// (0,0), (4,0), (5,3), (1,4).
    static ShapeTemplate convex_quad() {
        Matrix m(4, 2);
        m << 0, 0, 4, 0, 5, 3, 1, 4;
        return ShapeTemplate(TemplateKind::convex_quad, std::move(m));
    }
    /// (0,0), (4,0), (1,1), (0,4); the reflex vertex is (1,1).
    static ShapeTemplate concave_quad() {
        Matrix m(4, 2);
        m << 0, 0, 4, 0, 1, 1, 0, 4;
        return ShapeTemplate(TemplateKind::concave_quad, std::move(m));
    }
    /// Equilateral triangle with unit sides.
    static ShapeTemplate triangle() {
        Matrix m(3, 2);
        m << 0, 0, 1, 0, 0.5, std::sqrt(3.0) / 2.0;
        return ShapeTemplate(TemplateKind::triangle, std::move(m));
    }
    static ShapeTemplate custom(Matrix points) { return ShapeTemplate(TemplateKind::custom, std::move(points)); }

    static ShapeTemplate named(const std::string& name) {
        if (name == "convex-quad") return convex_quad();
        if (name == "concave-quad") return concave_quad();
        if (name == "triangle") return triangle();
        throw ValidationError("unknown template: " + name);
    }

    TemplateKind kind() const { return kind_; }
    const Matrix& base_points() const { return points_; }

private:
    ShapeTemplate(TemplateKind kind, Matrix points) : kind_(kind), points_(std::move(points)) {
        const LandmarkConfiguration check(points_);
        if (kind_ == TemplateKind::convex_quad && !is_convex_polygon(points_))
            throw ValidationError("convex template is not convex");
        if (kind_ == TemplateKind::concave_quad && reflex_vertex_count(points_) != 1)
            throw ValidationError("concave template must have exactly one reflex vertex");
    }

    TemplateKind kind_;
    Matrix points_;
};

struct Range {
    double lo = 0.0;
    double hi = 0.0;
    double draw(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
};

/// Ranges for a random similarity transform applied to the template before noise.
struct TransformJitter {
    /// One range per coordinate of c.
    std::vector<Range> c;
    Range b{1.0, 1.0};
    /// One range per rotation angle.
    std::vector<Range> theta;

    void validate(int dim) const {
        if (static_cast<int>(c.size()) != dim) throw ValidationError("jitter needs one translation range per dimension");
        if (static_cast<int>(theta.size()) != rotation_angle_count(dim)) throw ValidationError("jitter needs one range per rotation angle");
        if (!(b.lo > 0.0) || b.hi < b.lo) throw ValidationError("dilation range must be positive");
        for (const auto& r : c)
            if (r.hi < r.lo) throw ValidationError("empty translation range");
        for (const auto& r : theta)
            if (r.hi < r.lo) throw ValidationError("empty angle range");
    }
};

/// n noisy copies of a template: optional random similarity transform, then
/// i.i.d. N(0, sigma^2) noise on every coordinate.
inline ObjectSet simulate_objects(const ShapeTemplate& shape, int n, double sigma,
                                  const std::optional<TransformJitter>& jitter, std::uint64_t seed) {
    if (n < 1) throw ValidationError("n must be at least 1");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ValidationError("sigma must be non-negative");
    const Matrix& base = shape.base_points();
    const int d = static_cast<int>(base.cols());
    if (jitter) jitter->validate(d);

    std::vector<Matrix> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
        Matrix s = base;
        if (jitter) {
            SimilarityTransform t;
            t.c.resize(d);
            for (int j = 0; j < d; ++j) t.c(j) = jitter->c[static_cast<std::size_t>(j)].draw(rng);
            t.b = jitter->b.draw(rng);
            std::array<double, 3> angles{};
            for (int j = 0; j < rotation_angle_count(d); ++j) angles[static_cast<std::size_t>(j)] = jitter->theta[static_cast<std::size_t>(j)].draw(rng);
            t.rotation = RotationSpec::from_angles(d, angles.data());
            s = apply_transform(base, t);
        }
        if (sigma > 0.0)
            for (Eigen::Index i = 0; i < s.rows(); ++i)
                for (Eigen::Index j = 0; j < s.cols(); ++j) s(i, j) += sigma * rng.normal();
        out.push_back(std::move(s));
    }
    return ObjectSet(std::move(out));
}

/// n triangles with vertices uniform on the unit square. When `flip_index` is
/// set, that specimen has its vertex order reversed, which flips its orientation.
inline ObjectSet random_triangles(int n, std::uint64_t seed, std::optional<int> flip_index = std::nullopt) {
    if (n < 1) throw ValidationError("n must be at least 1");
    if (flip_index && (*flip_index < 0 || *flip_index >= n)) throw ValidationError("flip index out of range");
    std::vector<Matrix> out;
    for (int k = 0; k < n; ++k) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
        Matrix t(3, 2);
        for (Eigen::Index i = 0; i < 3; ++i)
            for (Eigen::Index j = 0; j < 2; ++j) t(i, j) = rng.uniform();
        if (flip_index && *flip_index == k) t = t.colwise().reverse().eval();
        out.push_back(std::move(t));
    }
    return ObjectSet(std::move(out));
}

/// Classically superimposes every specimen onto the registration object
/// (per-specimen full Procrustes fit), giving data that already sit in shape space.
inline ObjectSet prealign_to_shape_space(const ObjectSet& objects) {
    if (objects.size() < 2) throw ValidationError("pre-alignment needs at least two specimens");
    if (objects.space() != Space::configuration) throw ValidationError("pre-alignment expects configuration-space data");
    const Matrix reference = registration_object(objects);
    std::vector<Matrix> out;
    out.reserve(objects.specimens().size());
    for (const auto& s : objects.specimens()) out.push_back(apply_transform(s, fit_coordinates(reference, s).transform));
    return ObjectSet(std::move(out));
}

}  // namespace bpa
