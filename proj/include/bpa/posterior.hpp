#pragma once

// Bayesian Procrustes regression with isotropic landmark error.
//
// Specimen k is modelled landmark-by-landmark as
//
//     w_ik ~ g(c + b R(theta) z_i, sigma^2 I_d)
//
// where z is the registration (mean) object and g is a Gaussian or an
// isotropic Student-t kernel. The transform (c, b, theta) is either shared by
// all specimens (the default, giving the 5-parameter chain in 2D), separate
// per specimen, or fixed at the identity so that only sigma is unknown.
//
// Priors (the default kind):
//     c | sigma ~ N(0, sigma^2 I),  b ~ N(0, 1/tau_b),
//     theta ~ U(-pi, pi] per angle, sigma ~ U(0, sigma_max].
// The empirical kind replaces the c and b priors with N(c_hat, s^2 I) and
// N(b_hat, s^2) centred on the classical fit. The variance-only mode has
// the sigma prior alone.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "bpa/classical.hpp"
#include "bpa/config.hpp"
#include "bpa/errors.hpp"
#include "bpa/geometry.hpp"
#include "bpa/random.hpp"
#include "bpa/sampler.hpp"

namespace bpa {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

enum class PriorKind { paper_default, empirical };

struct PriorSpec {
    PriorKind kind = PriorKind::paper_default;
    double tau_b = kDefaults.tau_b;
    double sigma_max = kDefaults.sigma_max;
    /// Centre of the empirical prior in shared mode.
    std::optional<SimilarityTransform> empirical_center;
    /// Centres of the empirical prior in per-object mode, one per specimen.
    std::vector<SimilarityTransform> empirical_centers;
    double empirical_sd = kDefaults.empirical_sd;

    static PriorSpec paper(double tau_b = kDefaults.tau_b, double sigma_max = kDefaults.sigma_max) {
        PriorSpec p;
        p.tau_b = tau_b;
        p.sigma_max = sigma_max;
        return p;
    }

    static PriorSpec empirical(SimilarityTransform center, double sd = kDefaults.empirical_sd,
                               double sigma_max = kDefaults.sigma_max) {
        PriorSpec p;
        p.kind = PriorKind::empirical;
        p.empirical_center = std::move(center);
        p.empirical_sd = sd;
        p.sigma_max = sigma_max;
        return p;
    }

    void validate() const {
        if (!(tau_b > 0.0) || !std::isfinite(tau_b)) throw ValidationError("tau_b must be positive");
        if (!(sigma_max > 0.0) || !std::isfinite(sigma_max)) throw ValidationError("sigma_max must be positive");
        if (kind == PriorKind::empirical) {
            if (!(empirical_sd > 0.0) || !std::isfinite(empirical_sd)) throw ValidationError("empirical_sd must be positive");
            if (!empirical_center && empirical_centers.empty()) throw ValidationError("empirical prior needs a centre");
        }
    }
};

enum class KernelFamily { gaussian, student_t };

struct LikelihoodKernel {
    KernelFamily family = KernelFamily::gaussian;
    double dof = kDefaults.student_dof;

    static LikelihoodKernel gaussian() { return {}; }
    static LikelihoodKernel student_t(double dof = kDefaults.student_dof) { return {KernelFamily::student_t, dof}; }

    void validate() const {
        if (family == KernelFamily::student_t && (!(dof > 0.0) || !std::isfinite(dof)))
            throw ValidationError("Student-t degrees of freedom must be positive");
    }

    /// Log density of one d-dimensional landmark at squared distance r2 from its mean.
    double log_density(double r2, double sigma, int d) const {
        const double dd = d;
        if (family == KernelFamily::gaussian)
            return -0.5 * dd * std::log(2.0 * kPi) - dd * std::log(sigma) - r2 / (2.0 * sigma * sigma);
        return std::lgamma(0.5 * (dof + dd)) - std::lgamma(0.5 * dof) - 0.5 * dd * std::log(dof * kPi) -
               dd * std::log(sigma) - 0.5 * (dof + dd) * std::log1p(r2 / (dof * sigma * sigma));
    }
};

enum class TransformMode { shared, per_object, variance_only };

inline const char* to_string(TransformMode m) {
    switch (m) {
        case TransformMode::shared: return "shared";
        case TransformMode::per_object: return "per-object";
        case TransformMode::variance_only: return "variance-only";
    }
    return "?";
}

inline const char* to_string(KernelFamily f) { return f == KernelFamily::gaussian ? "gaussian" : "student-t"; }
inline const char* to_string(PriorKind k) { return k == PriorKind::paper_default ? "paper" : "empirical"; }

/// Sampler state for one transform plus sigma. Angles are stored unwrapped so
/// that out-of-range values can be rejected rather than silently folded.
struct ParameterState {
    Vector c;
    double b = 1.0;
    Vector theta;
    double sigma = 1.0;

    static ParameterState from(const SimilarityTransform& t, double sigma) {
        ParameterState s;
        s.c = t.c;
        s.b = t.b;
        s.theta.resize(t.rotation.angle_count());
        for (int i = 0; i < t.rotation.angle_count(); ++i) s.theta(i) = t.rotation.angle(i);
        s.sigma = sigma;
        return s;
    }

    static ParameterState identity(int dim, double sigma) { return from(SimilarityTransform::identity(dim), sigma); }

    int dim() const { return static_cast<int>(c.size()); }

    Matrix rotation() const {
        return dim() == 2 ? Matrix(rotation_2d(theta(0))) : Matrix(rotation_3d(theta(0), theta(1), theta(2)));
    }
};

/// Chain column names for a given dimension and mode.
inline std::vector<std::string> chain_columns(int dim, TransformMode mode, int n_objects = 1) {
    std::vector<std::string> base;
    for (int j = 1; j <= dim; ++j) base.push_back("c" + std::to_string(j));
    base.emplace_back("b");
    if (dim == 2) {
        base.emplace_back("theta");
    } else {
        base.emplace_back("thetax");
        base.emplace_back("thetay");
        base.emplace_back("thetaz");
    }
    std::vector<std::string> cols;
    if (mode == TransformMode::per_object) {
        for (int k = 1; k <= n_objects; ++k)
            for (const auto& b : base) cols.push_back(b + "_" + std::to_string(k));
    } else {
        cols = base;
    }
    cols.emplace_back("sigma");
    return cols;
}

/// Retained samples of one or more chains plus the run metadata.
struct PosteriorChain {
    Matrix samples;
    std::vector<std::string> columns;
    /// 1-based sweep index of each retained row.
    std::vector<int> iterations;
    int dim = 2;
    TransformMode mode = TransformMode::shared;
    std::string sampler = "metropolis";
    int n_samples = 0;
    int burn_in = 0;
    /// Proposal half-width; absent for the Gibbs sampler.
    std::optional<double> tune;
    std::uint64_t seed = 0;
    std::int64_t accepted = 0;
    std::int64_t proposals = 0;
    bool lazy = false;
    int chains = 1;
    /// Retained 3D states with |cos theta_y| below the gimbal-lock tolerance.
    std::int64_t gimbal_lock_states = 0;

    Eigen::Index rows() const { return samples.rows(); }

    double acceptance_rate() const {
        return proposals > 0 ? static_cast<double>(accepted) / static_cast<double>(proposals) : 0.0;
    }

    Eigen::Index column(std::string_view name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return static_cast<Eigen::Index>(i);
        throw ValidationError("unknown chain column: " + std::string(name));
    }

    Vector values(std::string_view name) const { return samples.col(column(name)); }
};

/// Joins chains that share a layout, in the order given.
inline PosteriorChain concatenate(const std::vector<PosteriorChain>& parts) {
    if (parts.empty()) throw ValidationError("nothing to concatenate");
    PosteriorChain out = parts.front();
    Eigen::Index total = 0;
    for (const auto& p : parts) {
        if (p.columns != out.columns) throw DimensionError("chains have different columns");
        total += p.rows();
    }
    out.samples.resize(total, static_cast<Eigen::Index>(out.columns.size()));
    out.iterations.clear();
    out.accepted = out.proposals = out.gimbal_lock_states = 0;
    Eigen::Index row = 0;
    for (const auto& p : parts) {
        out.samples.middleRows(row, p.rows()) = p.samples;
        row += p.rows();
        out.iterations.insert(out.iterations.end(), p.iterations.begin(), p.iterations.end());
        out.accepted += p.accepted;
        out.proposals += p.proposals;
        out.gimbal_lock_states += p.gimbal_lock_states;
    }
    out.chains = static_cast<int>(parts.size());
    return out;
}

class PosteriorTarget;

/// Data, registration object, prior and kernel bound together; evaluates the
/// log posterior of a packed parameter vector.
///
/// Packed layout: per transform block [c (d), b, angles (1 or 3)], then sigma.
/// Shared mode has one block, per-object mode one per specimen, variance-only none.
class PosteriorModel {
public:
    PosteriorModel(const ObjectSet& data, Matrix mean, PriorSpec prior, LikelihoodKernel kernel,
                   TransformMode mode = TransformMode::shared)
        : data_(&data), mean_(std::move(mean)), prior_(std::move(prior)), kernel_(kernel), mode_(mode) {
        prior_.validate();
        kernel_.validate();
        if (mean_.rows() != data.landmarks() || mean_.cols() != data.dim())
            throw DimensionError("registration object and data differ in landmark count or dimension");
        if (!mean_.allFinite()) throw ValidationError("registration object contains non-finite coordinates");
        if (prior_.kind == PriorKind::empirical) {
            if (mode_ == TransformMode::per_object &&
                static_cast<int>(prior_.empirical_centers.size()) != data.size())
                throw ValidationError("per-object empirical prior needs one centre per specimen");
            if (mode_ == TransformMode::shared && !prior_.empirical_center)
                throw ValidationError("shared empirical prior needs a centre");
        }
        dim_ = data.dim();
        angles_ = rotation_angle_count(dim_);
        block_size_ = dim_ + 1 + angles_;
        blocks_ = mode_ == TransformMode::per_object ? data.size() : (mode_ == TransformMode::shared ? 1 : 0);
        squared_norms_.reserve(data.specimens().size());
        total_.setZero(mean_.rows(), mean_.cols());
        for (const auto& s : data.specimens()) {
            squared_norms_.push_back(s.squaredNorm());
            total_ += s;
            total_squared_ += squared_norms_.back();
        }
    }

    int dim() const { return dim_; }
    TransformMode mode() const { return mode_; }
    const ObjectSet& data() const { return *data_; }
    const Matrix& mean() const { return mean_; }
    const PriorSpec& prior() const { return prior_; }
    const LikelihoodKernel& kernel() const { return kernel_; }

    std::size_t parameter_count() const { return static_cast<std::size_t>(blocks_ * block_size_ + 1); }
    std::size_t sigma_index() const { return parameter_count() - 1; }
    int block_size() const { return block_size_; }
    int blocks() const { return blocks_; }

    std::vector<std::string> columns() const { return chain_columns(dim_, mode_, data_->size()); }

    /// Packs a shared transform (repeated per block in per-object mode).
    std::vector<double> pack(const ParameterState& s) const {
        check_state(s);
        std::vector<double> x;
        x.reserve(parameter_count());
        for (int k = 0; k < blocks_; ++k) append_block(x, s);
        x.push_back(s.sigma);
        return x;
    }

    std::vector<double> pack(const std::vector<ParameterState>& per_object, double sigma) const {
        if (static_cast<int>(per_object.size()) != blocks_) throw ValidationError("one state per transform block required");
        std::vector<double> x;
        x.reserve(parameter_count());
        for (const auto& s : per_object) {
            check_state(s);
            append_block(x, s);
        }
        x.push_back(sigma);
        return x;
    }

    /// Row in chain layout for a packed vector.
    Eigen::RowVectorXd chain_row(const std::vector<double>& x) const {
        if (mode_ != TransformMode::variance_only) return Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(block_size_ + 1);
        row(dim_) = 1.0;
        row(block_size_) = x.back();
        return row;
    }

    double log_posterior(const std::vector<double>& x) const {
        if (x.size() != parameter_count()) throw DimensionError("packed parameter vector has the wrong length");
        const double sigma = x.back();
        double total = sigma_log_prior(sigma);
        if (!std::isfinite(total)) return kNegInf;
        if (mode_ == TransformMode::variance_only) {
            return total + likelihood_from_sse(sse_identity(), n_landmarks_total(), sigma, [&] { return identity_r2(); });
        }
        for (int k = 0; k < blocks_; ++k) {
            const double* block = x.data() + static_cast<std::ptrdiff_t>(k) * block_size_;
            const double prior = block_log_prior(k, block, sigma);
            if (!std::isfinite(prior)) return kNegInf;
            total += prior + block_log_likelihood(k, block, sigma);
        }
        return total;
    }

    double log_posterior(const ParameterState& s) const {
        if (mode_ == TransformMode::variance_only) {
            std::vector<double> x{s.sigma};
            return log_posterior(x);
        }
        if (s.dim() != dim_ || s.theta.size() != angles_) throw DimensionError("parameter state dimension mismatch");
        std::vector<double> x;
        for (int k = 0; k < blocks_; ++k) append_block(x, s);
        x.push_back(s.sigma);
        return log_posterior(x);
    }

private:
    friend class PosteriorTarget;

    void check_state(const ParameterState& s) const {
        if (s.dim() != dim_ || s.theta.size() != angles_) throw DimensionError("parameter state dimension mismatch");
    }

    void append_block(std::vector<double>& x, const ParameterState& s) const {
        if (mode_ == TransformMode::variance_only) return;
        for (int j = 0; j < dim_; ++j) x.push_back(s.c(j));
        x.push_back(s.b);
        for (int j = 0; j < angles_; ++j) x.push_back(s.theta(j));
    }

    int n_landmarks_total() const { return data_->size() * static_cast<int>(mean_.rows()); }

    double sigma_log_prior(double sigma) const {
        if (!(sigma > 0.0) || !(sigma <= prior_.sigma_max)) return kNegInf;
        return -std::log(prior_.sigma_max);
    }

    const SimilarityTransform& empirical_center(int block) const {
        return mode_ == TransformMode::per_object ? prior_.empirical_centers[static_cast<std::size_t>(block)]
                                                  : *prior_.empirical_center;
    }

    double block_log_prior(int block, const double* p, double sigma) const {
        for (int j = 0; j < angles_; ++j)
            if (!in_angle_range(p[dim_ + 1 + j])) return kNegInf;
        double lp = -angles_ * std::log(2.0 * kPi);
        const double b = p[dim_];
        if (prior_.kind == PriorKind::paper_default) {
            double cc = 0.0;
            for (int j = 0; j < dim_; ++j) cc += p[j] * p[j];
            lp += -0.5 * dim_ * std::log(2.0 * kPi * sigma * sigma) - cc / (2.0 * sigma * sigma);
            lp += 0.5 * std::log(prior_.tau_b / (2.0 * kPi)) - 0.5 * prior_.tau_b * b * b;
        } else {
            const auto& center = empirical_center(block);
            const double s2 = prior_.empirical_sd * prior_.empirical_sd;
            double cc = 0.0;
            for (int j = 0; j < dim_; ++j) cc += (p[j] - center.c(j)) * (p[j] - center.c(j));
            lp += -0.5 * dim_ * std::log(2.0 * kPi * s2) - cc / (2.0 * s2);
            lp += -0.5 * std::log(2.0 * kPi * s2) - (b - center.b) * (b - center.b) / (2.0 * s2);
        }
        return lp;
    }

    Matrix fitted(const double* p) const {
        const Matrix r = dim_ == 2 ? Matrix(rotation_2d(p[dim_ + 1]))
                                   : Matrix(rotation_3d(p[dim_ + 1], p[dim_ + 2], p[dim_ + 3]));
        Matrix m = p[dim_] * mean_ * r.transpose();
        for (int j = 0; j < dim_; ++j) m.col(j).array() += p[j];
        return m;
    }

    double block_sse(int block, const Matrix& m) const {
        if (mode_ == TransformMode::per_object) {
            const auto& w = (*data_)[static_cast<std::size_t>(block)];
            return std::max(0.0, squared_norms_[static_cast<std::size_t>(block)] - 2.0 * (w.array() * m.array()).sum() + m.squaredNorm());
        }
        const double n = data_->size();
        return std::max(0.0, total_squared_ - 2.0 * (total_.array() * m.array()).sum() + n * m.squaredNorm());
    }

    std::vector<double> block_r2(int block, const Matrix& m) const {
        std::vector<double> r2;
        auto push = [&](const Matrix& w) {
            for (Eigen::Index i = 0; i < w.rows(); ++i) r2.push_back((w.row(i) - m.row(i)).squaredNorm());
        };
        if (mode_ == TransformMode::per_object) {
            push((*data_)[static_cast<std::size_t>(block)]);
        } else {
            r2.reserve(static_cast<std::size_t>(n_landmarks_total()));
            for (const auto& w : data_->specimens()) push(w);
        }
        return r2;
    }

    int block_landmarks() const {
        return mode_ == TransformMode::per_object ? static_cast<int>(mean_.rows()) : n_landmarks_total();
    }

    double sse_identity() const { return block_sse(0, mean_); }
    std::vector<double> identity_r2() const { return block_r2(0, mean_); }

    template <class R2>
    double likelihood_from_sse(double sse, int landmarks, double sigma, R2&& r2) const {
        if (kernel_.family == KernelFamily::gaussian) return gaussian_from_sse(sse, landmarks, sigma);
        return student_from_r2(r2(), sigma);
    }

    double gaussian_from_sse(double sse, int landmarks, double sigma) const {
        return landmarks * (-0.5 * dim_ * std::log(2.0 * kPi) - dim_ * std::log(sigma)) - sse / (2.0 * sigma * sigma);
    }

    double student_from_r2(const std::vector<double>& r2, double sigma) const {
        double ll = 0.0;
        for (double v : r2) ll += kernel_.log_density(v, sigma, dim_);
        return ll;
    }

    double block_log_likelihood(int block, const double* p, double sigma) const {
        const Matrix m = fitted(p);
        if (kernel_.family == KernelFamily::gaussian) return gaussian_from_sse(block_sse(block, m), block_landmarks(), sigma);
        return student_from_r2(block_r2(block, m), sigma);
    }

    const ObjectSet* data_;
    Matrix mean_;
    PriorSpec prior_;
    LikelihoodKernel kernel_;
    TransformMode mode_;
    int dim_ = 2;
    int angles_ = 1;
    int block_size_ = 4;
    int blocks_ = 1;
    std::vector<double> squared_norms_;
    Matrix total_;
    double total_squared_ = 0.0;
};

/// Incremental ComponentTarget over a PosteriorModel. Updating one transform
/// coordinate re-evaluates only its block; updating sigma reuses the cached
/// residuals of every block.
class PosteriorTarget {
public:
    PosteriorTarget(const PosteriorModel& model, std::vector<double> init) : model_(&model), x_(std::move(init)) {
        if (x_.size() != model.parameter_count()) throw DimensionError("packed parameter vector has the wrong length");
        const int nb = std::max(model.blocks(), 1);
        blocks_.resize(static_cast<std::size_t>(nb));
        for (int k = 0; k < nb; ++k) blocks_[static_cast<std::size_t>(k)] = evaluate_block(k, block_ptr(k), sigma());
        sigma_prior_ = model.sigma_log_prior(sigma());
        resum();
    }

    std::size_t dimension() const { return x_.size(); }
    double value(std::size_t i) const { return x_[i]; }
    double log_density() const { return total_; }
    bool log_scale(std::size_t i) const { return i == model_->sigma_index(); }
    const std::vector<double>& state() const { return x_; }

    double propose(std::size_t i, double v) {
        staged_index_ = i;
        staged_old_ = x_[i];
        x_[i] = v;
        if (i == model_->sigma_index()) {
            staged_sigma_prior_ = model_->sigma_log_prior(v);
            if (!std::isfinite(staged_sigma_prior_)) return staged_total_ = kNegInf;
            staged_terms_.resize(blocks_.size());
            double total = staged_sigma_prior_;
            for (std::size_t k = 0; k < blocks_.size(); ++k) {
                auto& t = staged_terms_[k];
                t.prior = prior_term(static_cast<int>(k), v);
                t.likelihood = likelihood_term(blocks_[k], v);
                total += t.prior + t.likelihood;
            }
            return staged_total_ = total;
        }
        const int k = static_cast<int>(i) / model_->block_size();
        staged_block_ = evaluate_block(k, block_ptr(k), sigma());
        const auto& old = blocks_[static_cast<std::size_t>(k)];
        if (!std::isfinite(staged_block_.prior)) return staged_total_ = kNegInf;
        return staged_total_ = total_ - old.prior - old.likelihood + staged_block_.prior + staged_block_.likelihood;
    }

    void commit() {
        if (staged_index_ == model_->sigma_index()) {
            sigma_prior_ = staged_sigma_prior_;
            for (std::size_t k = 0; k < blocks_.size(); ++k) {
                blocks_[k].prior = staged_terms_[k].prior;
                blocks_[k].likelihood = staged_terms_[k].likelihood;
            }
            resum();
        } else {
            blocks_[staged_index_ / static_cast<std::size_t>(model_->block_size())] = std::move(staged_block_);
            total_ = staged_total_;
        }
    }

    void discard() { x_[staged_index_] = staged_old_; }

private:
    struct Block {
        double sse = 0.0;
        std::vector<double> r2;
        double prior = 0.0;
        double likelihood = 0.0;
    };
    struct Terms {
        double prior = 0.0;
        double likelihood = 0.0;
    };

    double sigma() const { return x_.back(); }

    const double* block_ptr(int k) const {
        return model_->blocks() == 0 ? nullptr : x_.data() + static_cast<std::ptrdiff_t>(k) * model_->block_size();
    }

    double prior_term(int k, double sigma) const {
        if (model_->blocks() == 0) return 0.0;
        return model_->block_log_prior(k, block_ptr(k), sigma);
    }

    double likelihood_term(const Block& b, double sigma) const {
        if (model_->kernel().family == KernelFamily::gaussian) {
            const int landmarks = model_->blocks() == 0 ? model_->n_landmarks_total() : model_->block_landmarks();
            return model_->gaussian_from_sse(b.sse, landmarks, sigma);
        }
        return model_->student_from_r2(b.r2, sigma);
    }

    Block evaluate_block(int k, const double* p, double sigma) const {
        Block b;
        if (!(sigma > 0.0)) {
            b.prior = kNegInf;
            return b;
        }
        b.prior = prior_term(k, sigma);
        if (p != nullptr && !std::isfinite(b.prior)) return b;
        const Matrix m = p == nullptr ? model_->mean() : model_->fitted(p);
        if (model_->kernel().family == KernelFamily::gaussian) {
            b.sse = model_->block_sse(k, m);
        } else {
            b.r2 = model_->block_r2(k, m);
        }
        b.likelihood = likelihood_term(b, sigma);
        return b;
    }

    void resum() {
        double t = sigma_prior_;
        for (const auto& b : blocks_) t += b.prior + b.likelihood;
        total_ = t;
    }

    const PosteriorModel* model_;
    std::vector<double> x_;
    std::vector<Block> blocks_;
    double sigma_prior_ = 0.0;
    double total_ = 0.0;

    std::size_t staged_index_ = 0;
    double staged_old_ = 0.0;
    double staged_total_ = 0.0;
    double staged_sigma_prior_ = 0.0;
    Block staged_block_;
    std::vector<Terms> staged_terms_;
};

/// Log prior plus log likelihood of a shared-transform state; -inf outside the
/// prior support (sigma <= 0, sigma > sigma_max, an angle outside (-pi, pi]).
inline double log_posterior(const ParameterState& state, const ObjectSet& data, const Matrix& mean,
                            const PriorSpec& prior, const LikelihoodKernel& kernel,
                            TransformMode mode = TransformMode::shared) {
    const PosteriorModel model(data, mean, prior, kernel, mode);
    return model.log_posterior(state);
}

struct MetropolisOptions {
    TransformMode mode = TransformMode::shared;
    bool lazy = false;
    /// Starting transforms per specimen in per-object mode; defaults to `init` repeated.
    std::vector<ParameterState> per_object_init;
};

/// Random-walk Metropolis over (c, b, theta, sigma); see sampler.hpp for the sweep.
/// Returns the n_samples - burn_in sweeps after burn-in in chain layout.
inline PosteriorChain metropolis_run(const ObjectSet& data, const Matrix& mean, const ParameterState& init,
                                     const PriorSpec& prior, const LikelihoodKernel& kernel, int n_samples,
                                     int burn_in, double tune, std::uint64_t seed,
                                     const MetropolisOptions& options = {}) {
    const SweepOptions sweep{n_samples, burn_in, tune, options.lazy};
    validate(sweep);
    const PosteriorModel model(data, mean, prior, kernel, options.mode);
    std::vector<double> x0 = options.mode == TransformMode::per_object && !options.per_object_init.empty()
                                 ? model.pack(options.per_object_init, init.sigma)
                                 : model.pack(init);
    PosteriorTarget target(model, std::move(x0));
    if (!std::isfinite(target.log_density())) throw ValidationError("initial state lies outside the prior support");

    PosteriorChain chain;
    chain.columns = model.columns();
    chain.dim = data.dim();
    chain.mode = options.mode;
    chain.n_samples = n_samples;
    chain.burn_in = burn_in;
    chain.tune = tune;
    chain.seed = seed;
    chain.lazy = options.lazy;
    chain.samples.resize(n_samples - burn_in, static_cast<Eigen::Index>(chain.columns.size()));
    chain.iterations.reserve(static_cast<std::size_t>(n_samples - burn_in));

    Rng rng(seed);
    Eigen::Index row = 0;
    const auto stats = run_sweeps(target, sweep, rng, [&](int iter, const PosteriorTarget& t) {
        chain.samples.row(row++) = model.chain_row(t.state());
        chain.iterations.push_back(iter);
    });
    chain.accepted = stats.accepted;
    chain.proposals = stats.proposals;

    if (chain.dim == 3 && options.mode != TransformMode::variance_only) {
        for (std::size_t j = 0; j < chain.columns.size(); ++j) {
            if (chain.columns[j].rfind("thetay", 0) != 0) continue;
            for (Eigen::Index r = 0; r < chain.samples.rows(); ++r)
                if (std::abs(std::cos(chain.samples(r, static_cast<Eigen::Index>(j)))) < kTol.gimbal_lock) ++chain.gimbal_lock_states;
        }
    }
    return chain;
}

/// Independent chains with seeds derive_seed(seed, i), run on separate threads
/// and concatenated in chain order.
inline PosteriorChain metropolis_chains(const ObjectSet& data, const Matrix& mean, const ParameterState& init,
                                        const PriorSpec& prior, const LikelihoodKernel& kernel, int n_samples,
                                        int burn_in, double tune, std::uint64_t seed, int chains,
                                        const MetropolisOptions& options = {}) {
    if (chains < 1) throw ValidationError("chains must be positive");
    if (chains == 1) return metropolis_run(data, mean, init, prior, kernel, n_samples, burn_in, tune, seed, options);
    std::vector<PosteriorChain> parts(static_cast<std::size_t>(chains));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(chains));
    {
        std::vector<std::jthread> workers;
        for (int i = 0; i < chains; ++i) {
            workers.emplace_back([&, i] {
                try {
                    parts[static_cast<std::size_t>(i)] = metropolis_run(data, mean, init, prior, kernel, n_samples, burn_in,
                                                                        tune, derive_seed(seed, static_cast<std::uint64_t>(i)), options);
                } catch (...) {
                    errors[static_cast<std::size_t>(i)] = std::current_exception();
                }
            });
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    PosteriorChain merged = concatenate(parts);
    merged.seed = seed;
    return merged;
}

/// Exact draws of sigma for the variance-only model on pre-shape data.
///
/// With N = n (p-1) d residual coordinates, SSE = sum_k ||w_k - mean||^2 and a
/// flat prior on sigma, the posterior density of s = sigma^2 is proportional to
/// s^{-N/2} exp(-SSE / 2s) * ds/dsigma^{-1} = s^{-(N+1)/2} exp(-SSE / 2s),
/// a scaled inverse chi-square with N - 1 degrees of freedom: sigma^2 = SSE / chi2_{N-1}.
inline PosteriorChain gibbs_sigma_run(const ObjectSet& data, const PreShape& mean, int n_samples, int burn_in,
                                      std::uint64_t seed) {
    if (data.space() != Space::preshape) throw ValidationError("the Gibbs sampler expects data in pre-shape space");
    if (mean.points().rows() != data.landmarks() || mean.dim() != data.dim())
        throw DimensionError("mean pre-shape and data differ in shape");
    if (n_samples < 1 || burn_in < 0 || burn_in >= n_samples) throw ValidationError("burn_in must lie in [0, n_samples)");
    double sse = 0.0;
    for (const auto& w : data.specimens()) sse += (w - mean.points()).squaredNorm();
    if (!(sse > 0.0)) throw NumericalError("residual sum of squares is zero; the sigma posterior is degenerate");
    const double coords = static_cast<double>(data.size()) * data.landmarks() * data.dim();
    const double dof = coords - 1.0;
    if (!(dof > 0.0)) throw NumericalError("too few residual coordinates for a proper sigma posterior");

    PosteriorChain chain;
    chain.dim = data.dim();
    chain.mode = TransformMode::variance_only;
    chain.sampler = "gibbs";
    chain.columns = chain_columns(chain.dim, TransformMode::variance_only);
    chain.n_samples = n_samples;
    chain.burn_in = burn_in;
    chain.seed = seed;
    chain.samples = Matrix::Zero(n_samples - burn_in, static_cast<Eigen::Index>(chain.columns.size()));
    chain.samples.col(chain.column("b")).setOnes();
    const auto sigma_col = chain.column("sigma");

    Rng rng(seed);
    for (int iter = 1; iter <= n_samples; ++iter) {
        const double sigma = std::sqrt(sse / rng.chi_square(dof));
        if (iter > burn_in) {
            chain.samples(iter - burn_in - 1, sigma_col) = sigma;
            chain.iterations.push_back(iter);
        }
    }
    chain.accepted = chain.proposals = n_samples;
    return chain;
}

struct BfpfEstimate {
    ParameterState parameters;
    /// c~ + b~ R(theta~) applied to the registration object.
    Matrix fitted;
};

/// Applies a parameter state to a registration object; b may take any sign here.
inline Matrix fitted_configuration(const ParameterState& s, const Matrix& mean) {
    if (mean.cols() != s.dim()) throw DimensionError("registration object dimension mismatch");
    Matrix m = s.b * mean * s.rotation().transpose();
    m.rowwise() += s.c.transpose();
    return m;
}

/// Posterior-mean (Bayes estimator under squared error) parameters and the fitted configuration.
inline BfpfEstimate bfpf_estimate(const PosteriorChain& chain, const Matrix& mean) {
    if (chain.rows() == 0) throw ValidationError("chain is empty");
    if (chain.mode == TransformMode::per_object) throw ValidationError("per-object chains need bfpf_estimate_objects");
    const Eigen::RowVectorXd avg = chain.samples.colwise().mean();
    const int d = chain.dim;
    ParameterState s;
    s.c = avg.head(d).transpose();
    s.b = avg(d);
    s.theta = avg.segment(d + 1, rotation_angle_count(d)).transpose();
    s.sigma = avg(avg.size() - 1);
    return {s, fitted_configuration(s, mean)};
}

/// Per-specimen estimates from a per-object chain.
inline std::vector<BfpfEstimate> bfpf_estimate_objects(const PosteriorChain& chain, const Matrix& mean) {
    if (chain.rows() == 0) throw ValidationError("chain is empty");
    if (chain.mode != TransformMode::per_object) throw ValidationError("not a per-object chain");
    const Eigen::RowVectorXd avg = chain.samples.colwise().mean();
    const int d = chain.dim;
    const int block = d + 1 + rotation_angle_count(d);
    const int n = static_cast<int>((avg.size() - 1) / block);
    std::vector<BfpfEstimate> out;
    for (int k = 0; k < n; ++k) {
        ParameterState s;
        s.c = avg.segment(k * block, d).transpose();
        s.b = avg(k * block + d);
        s.theta = avg.segment(k * block + d + 1, rotation_angle_count(d)).transpose();
        s.sigma = avg(avg.size() - 1);
        out.push_back({s, fitted_configuration(s, mean)});
    }
    return out;
}

/// Empirical prior centred on the classical estimates (shared or per specimen).
inline PriorSpec make_empirical_prior(const ObjectSet& data, const Matrix& mean, TransformMode mode,
                                      double sd = kDefaults.empirical_sd, double sigma_max = kDefaults.sigma_max) {
    PriorSpec p;
    p.kind = PriorKind::empirical;
    p.empirical_sd = sd;
    p.sigma_max = sigma_max;
    if (mode == TransformMode::per_object) {
        for (const auto& f : specimen_fits(data, mean)) p.empirical_centers.push_back(f.transform);
    } else {
        p.empirical_center = shared_fit(data, mean).transform;
    }
    p.validate();
    return p;
}

/// Classical starting point: the shared least-squares transform with the given sigma.
inline ParameterState classical_start(const ObjectSet& data, const Matrix& mean, double sigma) {
    return ParameterState::from(shared_fit(data, mean).transform, sigma);
}

}  // namespace bpa
