#pragma once

// Population comparison: KL divergence between fitted Gaussians, the taxa
// test built on it, predictive p-values and Monte Carlo Bayes factors.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "bpa/classical.hpp"
#include "bpa/errors.hpp"
#include "bpa/geometry.hpp"
#include "bpa/posterior.hpp"
#include "bpa/random.hpp"

namespace bpa {

/// Mean and symmetric positive-definite covariance of a multivariate normal.
struct GaussianSummary {
    Vector mu;
    Matrix sigma_mat;

    GaussianSummary(Vector mean, Matrix cov) : mu(std::move(mean)), sigma_mat(std::move(cov)) { validate(); }

    static GaussianSummary isotropic(Vector mean, double sigma) {
        const auto k = mean.size();
        return {std::move(mean), sigma * sigma * Matrix::Identity(k, k)};
    }

    int dim() const { return static_cast<int>(mu.size()); }

    void validate() const {
        if (sigma_mat.rows() != mu.size() || sigma_mat.cols() != mu.size()) throw DimensionError("covariance does not match the mean");
        if (!mu.allFinite() || !sigma_mat.allFinite()) throw ValidationError("Gaussian summary is not finite");
        if ((sigma_mat - sigma_mat.transpose()).cwiseAbs().maxCoeff() > kTol.symmetry * std::max(1.0, sigma_mat.cwiseAbs().maxCoeff()))
            throw ValidationError("covariance is not symmetric");
        Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma_mat, Eigen::EigenvaluesOnly);
        if (!(eig.eigenvalues().minCoeff() > 0.0)) throw NumericalError("covariance is singular or indefinite");
    }
};

/// D_KL(from || to) = E_from[log f_from - log f_to]
///   = 1/2 { tr(S_to^-1 S_from) + (mu_to - mu_from)^T S_to^-1 (mu_to - mu_from) - d + ln(|S_to| / |S_from|) }.
inline double kl_divergence_gaussian(const GaussianSummary& from, const GaussianSummary& to) {
    if (from.dim() != to.dim()) throw DimensionError("Gaussian summaries differ in dimension");
    const Eigen::LLT<Matrix> to_llt(to.sigma_mat);
    const Eigen::LLT<Matrix> from_llt(from.sigma_mat);
    if (to_llt.info() != Eigen::Success || from_llt.info() != Eigen::Success) throw NumericalError("covariance is not positive definite");
    const Vector diff = to.mu - from.mu;
    const double trace = to_llt.solve(from.sigma_mat).trace();
    const double mahalanobis = diff.dot(to_llt.solve(diff));
    const double logdet_to = 2.0 * to_llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double logdet_from = 2.0 * from_llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double kl = 0.5 * (trace + mahalanobis - from.dim() + logdet_to - logdet_from);
    return std::max(0.0, kl);
}

/// Posterior predictive p-value: (r + 1) / (N + 1) with r = #{draws >= observed}.
inline double predictive_p_value(double observed_stat, std::span<const double> model_draws) {
    if (model_draws.size() < 100) throw ValidationError("predictive p-value needs at least 100 simulated statistics");
    const auto r = std::count_if(model_draws.begin(), model_draws.end(), [&](double t) { return t >= observed_stat; });
    return static_cast<double>(r + 1) / static_cast<double>(model_draws.size() + 1);
}

struct ChainSettings {
    int n_samples = 5000;
    int burn_in = 1000;
    double tune = kDefaults.tune;
    PriorSpec prior = PriorSpec::paper();
    LikelihoodKernel kernel = LikelihoodKernel::gaussian();
    /// Starting sigma; the classical residual RMS when absent.
    std::optional<double> init_sigma;
};

/// One population's posterior summary.
struct PopulationFit {
    Matrix registration;
    BfpfEstimate estimate;
    GaussianSummary summary;
    PosteriorChain chain;
};

/// Runs the shared-transform sampler against the population's own mean shape
/// and summarises it as N(vec(BFPF configuration), sigma~^2 I).
inline PopulationFit fit_population(const ObjectSet& data, const ChainSettings& settings, std::uint64_t seed) {
    const Matrix reg = registration_object(data);
    const FitResult classical = shared_fit(data, reg);
    double sigma0 = 0.0;
    if (settings.init_sigma) {
        sigma0 = *settings.init_sigma;
    } else {
        double sse = 0.0;
        const Matrix m = apply_transform(reg, classical.transform);
        for (const auto& w : data.specimens()) sse += (w - m).squaredNorm();
        sigma0 = std::sqrt(sse / (static_cast<double>(data.size()) * reg.size()));
        if (!(sigma0 > 0.0)) throw NumericalError("population has no residual variation");
        // Residual spread beyond the prior bound would start outside the support.
        sigma0 = std::min(sigma0, 0.9 * settings.prior.sigma_max);
    }
    PriorSpec prior = settings.prior;
    if (prior.kind == PriorKind::empirical) prior = make_empirical_prior(data, reg, TransformMode::shared, prior.empirical_sd, prior.sigma_max);
    const auto chain = metropolis_run(data, reg, ParameterState::from(classical.transform, sigma0), prior, settings.kernel,
                                      settings.n_samples, settings.burn_in, settings.tune, seed);
    auto est = bfpf_estimate(chain, reg);
    const Matrix rowwise = est.fitted.transpose();  // landmark-major flattening
    auto summary = GaussianSummary::isotropic(Eigen::Map<const Vector>(rowwise.data(), rowwise.size()), est.parameters.sigma);
    return {reg, std::move(est), std::move(summary), std::move(chain)};
}

enum class Decision { h0, h1 };

inline const char* to_string(Decision d) { return d == Decision::h0 ? "H0" : "H1"; }

enum class PredictiveSource { posterior, prior };

struct TaxaTestOptions {
    std::uint64_t seed = 1;
    /// Attach a predictive p-value computed from this many replicates (>= 100).
    std::optional<int> p_value_replicates;
    PredictiveSource source = PredictiveSource::posterior;
};

struct TestResult {
    /// Sample KL divergence D~_KL(N_b || N_a).
    double statistic = 0.0;
    double threshold = 0.0;
    Decision decision = Decision::h0;
    std::optional<double> p_value;
    double sigma_a = 0.0;
    double sigma_b = 0.0;
    int n_a = 0;
    int n_b = 0;
    std::uint64_t seed = 0;
};

/// Statistic of the taxa test: KL from population b's fitted Gaussian to population a's.
inline double taxa_statistic(const ObjectSet& a, const ObjectSet& b, const ChainSettings& settings, std::uint64_t seed) {
    const auto fa = fit_population(a, settings, derive_seed(seed, 0));
    const auto fb = fit_population(b, settings, derive_seed(seed, 1));
    return kl_divergence_gaussian(fb.summary, fa.summary);
}

namespace detail {

inline ObjectSet draw_population(const Matrix& mean, double sigma, int n, Rng& rng) {
    std::vector<Matrix> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        Matrix s = mean;
        for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] += sigma * rng.normal();
        out.push_back(std::move(s));
    }
    return ObjectSet(std::move(out));
}

inline ParameterState draw_from_prior(const PriorSpec& prior, const SimilarityTransform& center, int dim, Rng& rng) {
    ParameterState s = ParameterState::identity(dim, 1.0);
    s.sigma = rng.uniform_open() * prior.sigma_max;
    for (Eigen::Index j = 0; j < s.theta.size(); ++j) s.theta(j) = rng.uniform(-kPi, kPi);
    if (prior.kind == PriorKind::paper_default) {
        for (int j = 0; j < dim; ++j) s.c(j) = rng.normal(0.0, s.sigma);
        s.b = rng.normal(0.0, 1.0 / std::sqrt(prior.tau_b));
    } else {
        for (int j = 0; j < dim; ++j) s.c(j) = rng.normal(center.c(j), prior.empirical_sd);
        s.b = rng.normal(center.b, prior.empirical_sd);
    }
    return s;
}

inline ObjectSet pooled(const ObjectSet& a, const ObjectSet& b) {
    std::vector<Matrix> all = a.specimens();
    all.insert(all.end(), b.specimens().begin(), b.specimens().end());
    return ObjectSet(std::move(all));
}

}  // namespace detail

/// Decides H1 (different taxa) iff D~_KL(N_b || N_a) >= epsilon.
///
/// Chains for a and b use substreams 0 and 1 of options.seed. With a p-value
/// requested, replicate populations of the observed sizes are drawn from the
/// pooled fit (posterior predictive: a random retained state per replicate;
/// prior predictive: a prior draw), each is re-fitted the same way, and the
/// observed statistic is ranked among the replicate statistics.
inline TestResult taxa_test(const ObjectSet& pop_a, const ObjectSet& pop_b, double epsilon, const ChainSettings& settings,
                            const TaxaTestOptions& options = {}) {
    if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
    if (pop_a.landmarks() != pop_b.landmarks() || pop_a.dim() != pop_b.dim() || pop_a.space() != pop_b.space())
        throw DimensionError("populations differ in landmark scheme");
    if (options.p_value_replicates && *options.p_value_replicates < 100) throw ValidationError("p-value needs at least 100 replicates");

    const auto fa = fit_population(pop_a, settings, derive_seed(options.seed, 0));
    const auto fb = fit_population(pop_b, settings, derive_seed(options.seed, 1));
    TestResult result;
    result.statistic = kl_divergence_gaussian(fb.summary, fa.summary);
    result.threshold = epsilon;
    result.decision = result.statistic >= epsilon ? Decision::h1 : Decision::h0;
    result.sigma_a = fa.estimate.parameters.sigma;
    result.sigma_b = fb.estimate.parameters.sigma;
    result.n_a = pop_a.size();
    result.n_b = pop_b.size();
    result.seed = options.seed;

    if (options.p_value_replicates) {
        const ObjectSet all = detail::pooled(pop_a, pop_b);
        const Matrix reg = registration_object(all);
        std::optional<PopulationFit> pooled_fit;
        if (options.source == PredictiveSource::posterior) pooled_fit = fit_population(all, settings, derive_seed(options.seed, 2));
        std::vector<double> draws;
        draws.reserve(static_cast<std::size_t>(*options.p_value_replicates));
        for (int r = 0; r < *options.p_value_replicates; ++r) {
            Rng rng(derive_seed(options.seed, 1000 + static_cast<std::uint64_t>(r)));
            ParameterState state;
            if (options.source == PredictiveSource::posterior) {
                const auto& chain = pooled_fit->chain;
                const auto row = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(chain.rows())));
                const Eigen::RowVectorXd v = chain.samples.row(row);
                const int d = all.dim();
                state.c = v.head(d).transpose();
                state.b = v(d);
                state.theta = v.segment(d + 1, rotation_angle_count(d)).transpose();
                state.sigma = v(v.size() - 1);
            } else {
                state = detail::draw_from_prior(settings.prior, shared_fit(all, reg).transform, all.dim(), rng);
            }
            const Matrix mean = fitted_configuration(state, reg);
            const ObjectSet ra = detail::draw_population(mean, state.sigma, pop_a.size(), rng);
            const ObjectSet rb = detail::draw_population(mean, state.sigma, pop_b.size(), rng);
            draws.push_back(taxa_statistic(ra, rb, settings, derive_seed(options.seed, 5000 + static_cast<std::uint64_t>(r))));
        }
        result.p_value = predictive_p_value(result.statistic, draws);
    }
    return result;
}

/// Linear-interpolation (type 7) sample quantile.
inline double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw ValidationError("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Random half of a population and its complement.
inline std::pair<ObjectSet, ObjectSet> split_half(const ObjectSet& objects, Rng& rng) {
    if (objects.size() < 2) throw ValidationError("cannot split fewer than two specimens");
    std::vector<std::size_t> idx(static_cast<std::size_t>(objects.size()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    std::vector<Matrix> first, second;
    for (std::size_t i = 0; i < idx.size(); ++i) (i < idx.size() / 2 ? first : second).push_back(objects[idx[i]]);
    return {ObjectSet(std::move(first), objects.space()), ObjectSet(std::move(second), objects.space())};
}

/// Calibrated threshold: the 95th percentile of split-half statistics, where
/// each population is split at random `splits` times.
inline double calibrate_epsilon(const ObjectSet& pop_a, const ObjectSet& pop_b, const ChainSettings& settings, int splits,
                                std::uint64_t seed, double level = 0.95) {
    if (splits < 1) throw ValidationError("splits must be positive");
    std::vector<double> stats;
    const ObjectSet* pops[] = {&pop_a, &pop_b};
    for (int p = 0; p < 2; ++p) {
        if (pops[p]->size() < 4) continue;
        for (int s = 0; s < splits; ++s) {
            const std::uint64_t stream = derive_seed(seed, static_cast<std::uint64_t>(p * 100000 + s));
            Rng rng(stream);
            const auto [x, y] = split_half(*pops[p], rng);
            stats.push_back(taxa_statistic(x, y, settings, stream));
        }
    }
    if (stats.empty()) throw ValidationError("populations too small to calibrate epsilon");
    return quantile(std::move(stats), level);
}

enum class MarginalModel { common_variance, mixture };
enum class MixtureWeights { fixed_half, dirichlet };

struct BayesFactorOptions {
    MarginalModel numerator = MarginalModel::common_variance;
    MarginalModel denominator = MarginalModel::mixture;
    MixtureWeights weights = MixtureWeights::fixed_half;
};

struct BayesFactorResult {
    double log_bayes_factor = 0.0;
    double bayes_factor = 0.0;
    double log_marginal_numerator = 0.0;
    double log_marginal_denominator = 0.0;
    /// Delta-method relative standard error of the ratio.
    double relative_se = 0.0;
    bool high_variance = false;
    int n_mc = 0;
};

namespace detail {

inline double log_sum_exp(const std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

struct MarginalEstimate {
    double log_marginal = 0.0;
    double relative_se = 0.0;
};

inline MarginalEstimate summarize_log_weights(const std::vector<double>& lw) {
    const double m = *std::max_element(lw.begin(), lw.end());
    if (!std::isfinite(m)) throw NumericalError("every prior draw has zero likelihood");
    const double n = static_cast<double>(lw.size());
    double s = 0.0, s2 = 0.0;
    for (double x : lw) {
        const double w = std::exp(x - m);
        s += w;
        s2 += w * w;
    }
    const double mean = s / n;
    const double var = std::max(0.0, s2 / n - mean * mean) * n / (n - 1.0);
    return {m + std::log(mean), std::sqrt(var / n) / mean};
}

}  // namespace detail

/// Monte Carlo Bayes factor m(a, b | M0) / m(a, b | M1) with naive prior sampling.
///
/// Both populations are registered to their classical shared-fit
/// configurations z_a, z_b, held fixed. Each model's marginal averages the
/// likelihood over n_mc prior draws of its variance parameters (sigma ~ the
/// PriorSpec's U(0, sigma_max]):
///   common variance   a_k ~ N(z_a, s^2 I), b_k ~ N(z_b, s^2 I)
///   mixture           every specimen x ~ l N(z_a, s1^2 I) + (1 - l) N(z_b, s2^2 I)
/// with l = 1/2 or l ~ Dirichlet(1, 1). The numerator uses substream 0 of
/// `seed` and the denominator substream 1.
inline BayesFactorResult bayes_factor_mc(const ObjectSet& data_a, const ObjectSet& data_b, const PriorSpec& prior, int n_mc,
                                         std::uint64_t seed, const BayesFactorOptions& options = {}) {
    if (n_mc < 1000) throw ValidationError("n_mc must be at least 1000");
    prior.validate();
    if (data_a.landmarks() != data_b.landmarks() || data_a.dim() != data_b.dim() || data_a.space() != data_b.space())
        throw DimensionError("populations differ in landmark scheme");

    auto reference = [](const ObjectSet& s) {
        const Matrix reg = registration_object(s);
        return apply_transform(reg, shared_fit(s, reg).transform);
    };
    const Matrix za = reference(data_a);
    const Matrix zb = reference(data_b);
    const double k = static_cast<double>(za.size());  // coordinates per specimen

    // Squared distances of every specimen to both references; population a first.
    std::vector<double> to_a, to_b;
    std::vector<int> label;
    for (const auto* set : {&data_a, &data_b}) {
        for (const auto& w : set->specimens()) {
            to_a.push_back((w - za).squaredNorm());
            to_b.push_back((w - zb).squaredNorm());
            label.push_back(set == &data_a ? 0 : 1);
        }
    }
    auto log_normal = [k](double sq, double sigma) {
        return -0.5 * k * std::log(2.0 * kPi * sigma * sigma) - sq / (2.0 * sigma * sigma);
    };

    auto log_likelihood = [&](MarginalModel model, Rng& rng) {
        if (model == MarginalModel::common_variance) {
            const double s = rng.uniform_open() * prior.sigma_max;
            double ll = 0.0;
            for (std::size_t i = 0; i < label.size(); ++i) ll += log_normal(label[i] == 0 ? to_a[i] : to_b[i], s);
            return ll;
        }
        const double s1 = rng.uniform_open() * prior.sigma_max;
        const double s2 = rng.uniform_open() * prior.sigma_max;
        const double l = options.weights == MixtureWeights::fixed_half ? 0.5 : rng.uniform_open();
        const double log_l1 = std::log(l), log_l2 = std::log1p(-l);
        double ll = 0.0;
        for (std::size_t i = 0; i < label.size(); ++i) {
            const double x = log_l1 + log_normal(to_a[i], s1);
            const double y = log_l2 + log_normal(to_b[i], s2);
            const double m = std::max(x, y);
            ll += std::isfinite(m) ? m + std::log(std::exp(x - m) + std::exp(y - m)) : m;
        }
        return ll;
    };

    auto marginal = [&](MarginalModel model, std::uint64_t stream) {
        Rng rng(derive_seed(seed, stream));
        std::vector<double> lw(static_cast<std::size_t>(n_mc));
        for (auto& v : lw) v = log_likelihood(model, rng);
        return detail::summarize_log_weights(lw);
    };

    const auto m0 = marginal(options.numerator, 0);
    const auto m1 = marginal(options.denominator, 1);
    BayesFactorResult r;
    r.log_marginal_numerator = m0.log_marginal;
    r.log_marginal_denominator = m1.log_marginal;
    r.log_bayes_factor = m0.log_marginal - m1.log_marginal;
    r.bayes_factor = std::exp(r.log_bayes_factor);
    r.relative_se = std::hypot(m0.relative_se, m1.relative_se);
    r.high_variance = r.relative_se > 0.5;
    r.n_mc = n_mc;
    return r;
}

}  // namespace bpa
