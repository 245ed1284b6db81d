#pragma once

// Component-wise random-walk Metropolis.
//
// One iteration is a sweep over every coordinate in index order. Coordinate
// i is proposed as x_i + U(-tune, tune), or x_i * exp(U(-tune, tune)) for
// coordinates the target marks as log-scale (the Jacobian x'/x enters the
// acceptance ratio). The move is accepted with probability
// min(1, exp(log pi(x') - log pi(x))).
//
// With `lazy` set, each coordinate first flips a fair coin and keeps its old
// value on tails; this is a lazy version of the same kernel.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "bpa/errors.hpp"
#include "bpa/random.hpp"

namespace bpa {

/// A target the sweep can update one coordinate at a time.
///
/// propose(i, v) returns the log density with coordinate i replaced by v and
/// stages that state; commit() adopts the staged state, discard() drops it.
template <class T>
concept ComponentTarget = requires(T& t, const T& ct, std::size_t i, double v) {
    { ct.dimension() } -> std::convertible_to<std::size_t>;
    { ct.value(i) } -> std::convertible_to<double>;
    { ct.log_density() } -> std::convertible_to<double>;
    { ct.log_scale(i) } -> std::convertible_to<bool>;
    { t.propose(i, v) } -> std::convertible_to<double>;
    t.commit();
    t.discard();
};

struct SweepOptions {
    int n_samples = 20000;
    int burn_in = 1000;
    double tune = 0.05;
    bool lazy = false;
};

struct SweepStats {
    std::int64_t proposals = 0;
    std::int64_t accepted = 0;
    /// Coordinate updates skipped by the lazy coin.
    std::int64_t lazy_holds = 0;
};

inline void validate(const SweepOptions& o) {
    if (!(o.tune > 0.0) || !std::isfinite(o.tune)) throw ValidationError("tune must be positive");
    if (o.n_samples < 1) throw ValidationError("n_samples must be positive");
    if (o.burn_in < 0 || o.burn_in >= o.n_samples) throw ValidationError("burn_in must lie in [0, n_samples)");
}

/// Runs the sweep and calls record(iteration, target) for every iteration after burn-in
/// (iterations are numbered from 1).
template <ComponentTarget Target, class Record>
SweepStats run_sweeps(Target& target, const SweepOptions& options, Rng& rng, Record&& record) {
    validate(options);
    if (!std::isfinite(target.log_density())) throw ValidationError("initial state lies outside the support of the target");
    SweepStats stats;
    double current = target.log_density();
    const std::size_t k = target.dimension();
    for (int iter = 1; iter <= options.n_samples; ++iter) {
        for (std::size_t i = 0; i < k; ++i) {
            if (options.lazy && rng.uniform() > 0.5) {
                ++stats.lazy_holds;
                continue;
            }
            const double step = rng.uniform(-options.tune, options.tune);
            const double old_value = target.value(i);
            double proposed;
            double log_jacobian = 0.0;
            if (target.log_scale(i)) {
                proposed = old_value * std::exp(step);
                log_jacobian = step;
            } else {
                proposed = old_value + step;
            }
            const double candidate = target.propose(i, proposed);
            const double log_alpha = candidate - current + log_jacobian;
            const double u = rng.uniform_open();
            ++stats.proposals;
            if (std::isfinite(candidate) && std::log(u) < log_alpha) {
                target.commit();
                current = candidate;
                ++stats.accepted;
            } else {
                target.discard();
            }
        }
        if (iter > options.burn_in) record(iter, target);
    }
    return stats;
}

/// Target backed by a plain log-density function over the full vector.
class FunctionTarget {
public:
    using LogDensity = std::function<double(const std::vector<double>&)>;

    FunctionTarget(LogDensity f, std::vector<double> init, std::vector<bool> log_scale = {})
        : f_(std::move(f)), x_(std::move(init)), log_scale_(std::move(log_scale)) {
        log_scale_.resize(x_.size(), false);
        current_ = f_(x_);
    }

    std::size_t dimension() const { return x_.size(); }
    double value(std::size_t i) const { return x_[i]; }
    double log_density() const { return current_; }
    bool log_scale(std::size_t i) const { return log_scale_[i]; }
    const std::vector<double>& state() const { return x_; }

    double propose(std::size_t i, double v) {
        staged_index_ = i;
        staged_old_ = x_[i];
        x_[i] = v;
        staged_ = f_(x_);
        return staged_;
    }
    void commit() { current_ = staged_; }
    void discard() { x_[staged_index_] = staged_old_; }

private:
    LogDensity f_;
    std::vector<double> x_;
    std::vector<bool> log_scale_;
    double current_ = 0.0;
    double staged_ = 0.0;
    std::size_t staged_index_ = 0;
    double staged_old_ = 0.0;
};

}  // namespace bpa
