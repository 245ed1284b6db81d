#pragma once

namespace bpa {

/// Numerical tolerances shared by every module.
struct Tolerances {
    /// Unit-norm check for pre-shapes.
    double unit_norm = 1e-10;
    /// Orthogonality / determinant checks on rotation matrices.
    double rotation = 1e-12;
    /// Below this Frobenius norm a centred configuration counts as a single point.
    double degenerate_norm = 1e-14;
    /// Symmetry check for covariance matrices.
    double symmetry = 1e-10;
    /// |cos(theta_y)| below this is reported as a gimbal-lock state.
    double gimbal_lock = 1e-6;
    /// Smallest bandwidth used by the kernel density estimator.
    double bandwidth_floor = 1e-6;
};

inline constexpr Tolerances kTol{};

/// Defaults that mirror the published protocol, or fill gaps it leaves open.
struct Defaults {
    int n_samples = 20000;
    int burn_in = 1000;
    double tune = 0.05;
    double tau_b = 0.01;
    double sigma_max = 100.0;
    double student_dof = 4.0;
    double empirical_sd = 0.1;
    double init_sigma = 1.5;
    int mean_shape_max_iter = 100;
    double mean_shape_tol = 1e-9;
};

inline constexpr Defaults kDefaults{};

}  // namespace bpa
