#pragma once

#include <cstddef>
#include <vector>

#include "deepkexp/la.hpp"
#include "deepkexp/rng.hpp"

namespace deepkexp {

struct KernelParams;

// Product of generalized normals: q0(x) = prod_d exp(-|x_d - mu_d|^beta_d / (2 sigma_d^2)).
// Scales are stored as log(sigma) and shapes as inverse-softplus of (beta - 1),
// so sigma > 0 and beta > 1 hold for any real-valued free parameters.
struct BaseDensityParams {
    Vector mu;
    Vector log_sigma;
    Vector beta_free;
    bool trainable = true;

    std::size_t dim() const { return mu.size(); }
    double sigma(std::size_t d) const;
    double beta(std::size_t d) const;
    std::size_t scalar_count() const { return 3 * mu.size(); }
};

// Untrained default: isotropic Gaussian with standard deviation 2.
BaseDensityParams base_default(std::size_t dim);
BaseDensityParams base_gaussian(const Vector& mu, const Vector& sigma);
BaseDensityParams base_zeros_like(const BaseDensityParams& p);
void base_collect_scalars(BaseDensityParams& p, std::vector<double*>& out);

double inv_softplus(double y);

// Unnormalized log density: sum_d -|x_d - mu_d|^beta_d / (2 sigma_d^2).
double base_log_density(const BaseDensityParams& p, const double* x);

// First and second per-coordinate log-derivatives. For beta < 2 the second
// derivative is singular at the mode, so |x - mu| is clamped below at 1e-6
// inside the (beta - 2) power.
void base_grad(const BaseDensityParams& p, const double* x, double* out);
void base_hess_diag(const BaseDensityParams& p, const double* x, double* out);
Vector base_grad(const BaseDensityParams& p, const Vector& x);
Vector base_hess_diag(const BaseDensityParams& p, const Vector& x);

// log of the integral of exp(base_log_density); closed form per dimension.
double base_log_partition(const BaseDensityParams& p);

// Gamma-transform sampler: |x| = (2 sigma^2 g)^(1/beta), g ~ Gamma(1/beta, 1),
// sign uniform. Rows are points.
Matrix base_sample(const BaseDensityParams& p, std::size_t n, Rng& rng);

// Normalizability guard: the kernel is bounded by construction, so the model
// integrates iff every shape exponent exceeds 1. Guards against parameter
// files that bypassed the free-parameter transform.
bool base_check_normalizable(const BaseDensityParams& p, const KernelParams& kp);

// Reverse pass: sensitivities on base_grad and base_hess_diag at x propagate
// into the free parameters (accumulated into grads).
void base_backward(const BaseDensityParams& p, const double* x, const double* s_grad,
                   const double* s_hess, BaseDensityParams& grads);

}  // namespace deepkexp
