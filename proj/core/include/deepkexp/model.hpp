#pragma once

#include <cstddef>

#include "deepkexp/basedist.hpp"
#include "deepkexp/kernel.hpp"
#include "deepkexp/la.hpp"
#include "deepkexp/whitening.hpp"

namespace deepkexp {

// Regularizer weights of the closed-form fit, stored as logs so gradient
// steps keep them positive. lambda_h defaults to 0 (log = -inf); it usually
// hurts the fit and only joins optimization when explicitly enabled.
struct RegWeights {
    double log_lambda_alpha;
    double log_lambda_c;
    double log_lambda_h;

    double lambda_alpha() const;
    double lambda_c() const;
    double lambda_h() const;

    static RegWeights defaults();  // 1e-3, 1e-3, 0
    static RegWeights from_values(double la, double lc, double lh);
};

// Averaged derivative products over a data batch, plus the inducing Gram.
//   grad_prod(m,m') = (1/N) sum_n sum_d  d_d k(x_n, z_m) d_d k(x_n, z_m')
//   curv_prod(m,m') = same with second derivatives
//   gram(m,m')      = k(z_m, z_m')
//   rhs_m           = (1/N) sum_n sum_d [d_d^2 k + d_d log q0 * d_d k]
//   rhs_curv_m      = (1/N) sum_n sum_d  d_d^2 log q0 * d_d^2 k
// The solve uses rhs + lambda_c * rhs_curv, so lambda_c can change without
// re-assembly.
struct ScoreMatrices {
    Matrix grad_prod;
    Matrix curv_prod;
    Matrix gram;
    Vector rhs;
    Vector rhs_curv;
};

// Unnormalized density exp(f(x)) q0(x) with f(x) = sum_m alpha_m k(x, z_m).
// The kernel, base and inducing points live in whitened coordinates; the
// whitening record maps raw data into that space.
struct FittedModel {
    KernelParams kernel;
    BaseDensityParams base;
    Matrix inducing;  // M x D
    Vector alpha;     // M
    Whitening whitening;

    std::size_t dim() const { return kernel.input_dim; }
    std::size_t inducing_count() const { return inducing.rows(); }
};

// Evaluations in internal (whitened) coordinates.
double model_f(const FittedModel& m, const Vector& x);
double log_p_tilde(const FittedModel& m, const Vector& x);
Vector grad_log_p_tilde(const FittedModel& m, const Vector& x);
Vector hess_diag_log_p_tilde(const FittedModel& m, const Vector& x);

// Raw-coordinate counterparts, chained through the whitening map. The log
// density includes + log|det transform| so it stays a density in raw space.
double log_p_tilde_raw(const FittedModel& m, const Vector& x_raw);
Vector grad_log_p_tilde_raw(const FittedModel& m, const Vector& x_raw);

ScoreMatrices assemble(const KernelParams& kp, const BaseDensityParams& bp,
                       const Matrix& inducing, const Matrix& batch, std::size_t n_threads = 1);

// alpha = -(grad_prod + la*I + lh*gram + lc*curv_prod)^{-1} (rhs + lc*rhs_curv).
Vector solve_alpha(const ScoreMatrices& sm, const RegWeights& reg);

// (1/N) sum_n sum_d [ d_d^2 log p~(x_n) + 1/2 (d_d log p~(x_n))^2 ]
double score_loss(const FittedModel& m, const Matrix& batch);

// score_loss + la/2 ||alpha||^2 + lh/2 alpha' gram alpha
//            + lc/(2N) sum_n sum_d (d_d^2 log p~)^2
double regularized_loss(const FittedModel& m, const Matrix& batch, const RegWeights& reg);

}  // namespace deepkexp
