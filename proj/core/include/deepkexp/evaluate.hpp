#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include "deepkexp/model.hpp"
#include "deepkexp/rng.hpp"

namespace deepkexp {

// Importance-sampled normalizer: y ~ q0, r = exp(f(y)), Z = E[r] * Z_q0.
// The running mean is kept in log space so huge f cannot overflow it.
struct LogZEstimate {
    double log_z = 0.0;        // log_partition(q0) + log mean(r)
    double log_mean_r = 0.0;
    double var_r = 0.0;        // unbiased sample variance of r (linear scale)
    double rel_std_error = 0.0;  // sqrt(var_r / n) / mean(r), computed in logs
    std::size_t samples = 0;
};

LogZEstimate estimate_log_z(const FittedModel& m, std::size_t n_samples, std::uint64_t seed);

// Finite-set Stein discrepancy squared, V-statistic form, computed in the
// model's internal (whitened) coordinates. Locations are random data rows
// plus N(0, 0.2^2) jitter; the location kernel is Gaussian with the median
// pairwise distance over the location set as bandwidth.
double fssd2(const FittedModel& m, const Matrix& data_raw, std::size_t n_locations,
             std::uint64_t seed);

// Same statistic with the location set supplied directly (internal
// coordinates). Invariant to row order of both arguments.
double fssd2_at(const FittedModel& m, const Matrix& data_raw, const Matrix& locations);

// (log(x/t) + t/x - 1) / (x - t)^2, extended across the removable singularity
// at x = t by its Taylor expansion. Strictly convex in x on (0, inf).
double chi(double t, double x);

// log(z/q) + q/z - 1; the numerator of chi and the worst-case term of the
// bias bound.
double psi(double q, double z);

// All second central differences of chi_t over the grid are positive.
bool chi_convexity_check(double t, const Vector& grid);

struct BiasBoundResult {
    double bound = 0.0;
    double z_hat = 0.0;  // mean r over the final sample
    double var_r = 0.0;
    double a = 0.0;      // uniform lower bound on r
    double s = 0.0;      // scaled pilot quantile
    double rho = 0.0;    // 0.999-confidence upper bound on Pr(r <= s)
    bool degenerate_quantiles = false;  // pilot quantile fell at or below a
};

// Upper bound on |E log Z_hat - log Z| for the n-sample importance estimator.
// draw produces one importance weight r >= support_min. Three phases: a pilot
// sets the quantile s, a second sample gives the Hoeffding tail bound rho on
// Pr(r <= s), and a third estimates Var[r] and Z. The bound is
//   chi_t(Z_hat) Var/n + max(psi(a, Z_hat), psi(t, Z_hat)) (4 rho (1-rho))^{n/2}
// with t = (s + a)/2.
BiasBoundResult bias_bound_from_sampler(const std::function<double(Rng&)>& draw,
                                        double support_min, std::size_t n_samples,
                                        std::uint64_t seed, std::size_t pilot = 100000);

BiasBoundResult bias_bound_detail(const FittedModel& m, std::size_t n_samples,
                                  std::uint64_t seed, std::size_t pilot = 100000);
double bias_bound(const FittedModel& m, std::size_t n_samples, std::uint64_t seed,
                  std::size_t pilot = 100000);

struct EvalConfig {
    std::size_t n_locations = 20;
    std::size_t logz_samples = 100000;
    std::size_t bias_samples = 100000;
    std::size_t bias_pilot = 100000;
    std::uint64_t seed = 0;
};

struct EvalReport {
    double test_score_loss = 0.0;
    double fssd2 = 0.0;
    double loglik_per_dim = 0.0;
    double log_z_hat = 0.0;
    double bias_bound = 0.0;
    std::size_t n_locations = 0;
    std::size_t logz_samples = 0;
    std::size_t bias_samples = 0;
};

// Test rows are raw coordinates; everything is whitened internally. The
// per-dimension log likelihood includes the whitening Jacobian, so it is a
// raw-space density value.
EvalReport evaluate(const FittedModel& m, const Matrix& test_raw, const EvalConfig& cfg);

}  // namespace deepkexp
