#include "deepkexp/basedist.hpp"

#include <cmath>

#include "deepkexp/errors.hpp"
#include "deepkexp/featnet.hpp"
#include "deepkexp/kernel.hpp"

namespace deepkexp {

namespace {

constexpr double kModeClamp = 1e-6;
// Free parameters within one ulp-scale of beta = 2 take the exact Gaussian
// branch; the generic pow-based path is discontinuous at the mode as beta
// crosses 2 from above.
constexpr double kGaussTol = 1e-12;

}  // namespace

double BaseDensityParams::sigma(std::size_t d) const {
    return std::exp(log_sigma[d]);
}

double BaseDensityParams::beta(std::size_t d) const {
    return 1.0 + softplus(beta_free[d]);
}

double inv_softplus(double y) {
    return std::log(std::expm1(y));
}

BaseDensityParams base_default(std::size_t dim) {
    BaseDensityParams p;
    p.mu.assign(dim, 0.0);
    p.log_sigma.assign(dim, std::log(2.0));
    p.beta_free.assign(dim, inv_softplus(1.0));
    return p;
}

BaseDensityParams base_gaussian(const Vector& mu, const Vector& sigma) {
    BaseDensityParams p;
    p.mu = mu;
    p.log_sigma.resize(sigma.size());
    for (std::size_t d = 0; d < sigma.size(); ++d) {
        p.log_sigma[d] = std::log(sigma[d]);
    }
    p.beta_free.assign(mu.size(), inv_softplus(1.0));
    return p;
}

BaseDensityParams base_zeros_like(const BaseDensityParams& p) {
    BaseDensityParams z;
    z.mu.assign(p.mu.size(), 0.0);
    z.log_sigma.assign(p.log_sigma.size(), 0.0);
    z.beta_free.assign(p.beta_free.size(), 0.0);
    z.trainable = p.trainable;
    return z;
}

void base_collect_scalars(BaseDensityParams& p, std::vector<double*>& out) {
    for (double& x : p.mu) {
        out.push_back(&x);
    }
    for (double& x : p.log_sigma) {
        out.push_back(&x);
    }
    for (double& x : p.beta_free) {
        out.push_back(&x);
    }
}

double base_log_density(const BaseDensityParams& p, const double* x) {
    double acc = 0.0;
    for (std::size_t d = 0; d < p.dim(); ++d) {
        const double s = std::fabs(x[d] - p.mu[d]);
        const double sig = p.sigma(d);
        const double b = p.beta(d);
        if (std::fabs(b - 2.0) < kGaussTol) {
            acc -= s * s / (2.0 * sig * sig);
        } else {
            acc -= std::pow(s, b) / (2.0 * sig * sig);
        }
    }
    return acc;
}

void base_grad(const BaseDensityParams& p, const double* x, double* out) {
    for (std::size_t d = 0; d < p.dim(); ++d) {
        const double y = x[d] - p.mu[d];
        const double sig = p.sigma(d);
        const double b = p.beta(d);
        if (std::fabs(b - 2.0) < kGaussTol) {
            out[d] = -y / (sig * sig);
        } else {
            const double s = std::fabs(y);
            const double sg = (y > 0.0) ? 1.0 : (y < 0.0 ? -1.0 : 0.0);
            out[d] = -b / (2.0 * sig * sig) * sg * std::pow(s, b - 1.0);
        }
    }
}

void base_hess_diag(const BaseDensityParams& p, const double* x, double* out) {
    for (std::size_t d = 0; d < p.dim(); ++d) {
        const double sig = p.sigma(d);
        const double b = p.beta(d);
        if (std::fabs(b - 2.0) < kGaussTol) {
            out[d] = -1.0 / (sig * sig);
        } else {
            double s = std::fabs(x[d] - p.mu[d]);
            if (b < 2.0) {
                s = std::max(s, kModeClamp);
            }
            out[d] = -b * (b - 1.0) / (2.0 * sig * sig) * std::pow(s, b - 2.0);
        }
    }
}

Vector base_grad(const BaseDensityParams& p, const Vector& x) {
    if (x.size() != p.dim()) {
        throw DimensionMismatch("base_grad: dimension mismatch");
    }
    Vector out(p.dim());
    base_grad(p, x.data(), out.data());
    return out;
}

Vector base_hess_diag(const BaseDensityParams& p, const Vector& x) {
    if (x.size() != p.dim()) {
        throw DimensionMismatch("base_hess_diag: dimension mismatch");
    }
    Vector out(p.dim());
    base_hess_diag(p, x.data(), out.data());
    return out;
}

double base_log_partition(const BaseDensityParams& p) {
    // Per dimension: 2 (2 sigma^2)^(1/beta) Gamma(1 + 1/beta).
    double acc = 0.0;
    for (std::size_t d = 0; d < p.dim(); ++d) {
        const double sig = p.sigma(d);
        const double b = p.beta(d);
        acc += std::log(2.0) + std::log(2.0 * sig * sig) / b + std::lgamma(1.0 + 1.0 / b);
    }
    return acc;
}

Matrix base_sample(const BaseDensityParams& p, std::size_t n, Rng& rng) {
    Matrix out(n, p.dim());
    for (std::size_t i = 0; i < n; ++i) {
        double* row = out.row(i);
        for (std::size_t d = 0; d < p.dim(); ++d) {
            const double sig = p.sigma(d);
            const double b = p.beta(d);
            const double g = rng.gamma(1.0 / b);
            const double mag = std::pow(2.0 * sig * sig * g, 1.0 / b);
            const double sign = (rng.uniform01() < 0.5) ? -1.0 : 1.0;
            row[d] = p.mu[d] + sign * mag;
        }
    }
    return out;
}

bool base_check_normalizable(const BaseDensityParams& p, const KernelParams& kp) {
    (void)kp;  // every mixture component is bounded by 1, so only beta matters
    for (std::size_t d = 0; d < p.dim(); ++d) {
        if (!(p.beta(d) > 1.0)) {
            return false;
        }
    }
    return true;
}

void base_backward(const BaseDensityParams& p, const double* x, const double* s_grad,
                   const double* s_hess, BaseDensityParams& grads) {
    for (std::size_t d = 0; d < p.dim(); ++d) {
        const double y = x[d] - p.mu[d];
        const double s = std::fabs(y);
        const double sg = (y > 0.0) ? 1.0 : (y < 0.0 ? -1.0 : 0.0);
        const double sig = p.sigma(d);
        const double c2 = 1.0 / (2.0 * sig * sig);
        const double b = p.beta(d);
        const bool gauss = std::fabs(b - 2.0) < kGaussTol;
        const bool clamped = !gauss && b < 2.0 && s < kModeClamp;
        const double st = clamped ? kModeClamp : s;

        const double gq = gauss ? -y / (sig * sig) : -b * c2 * sg * std::pow(s, b - 1.0);
        const double hq = gauss ? -1.0 / (sig * sig) : -b * (b - 1.0) * c2 * std::pow(st, b - 2.0);

        const double sgr = s_grad ? s_grad[d] : 0.0;
        const double shs = s_hess ? s_hess[d] : 0.0;
        if (sgr == 0.0 && shs == 0.0) {
            continue;
        }

        // d(grad)/d(mu) = -d(grad)/dx = -hess (unclamped form; exact for the
        // implementation away from the clamp region).
        const double dg_dmu = b * (b - 1.0) * c2 * std::pow(std::max(s, kModeClamp), b - 2.0);
        const double dh_dmu =
            clamped ? 0.0
                    : b * (b - 1.0) * (b - 2.0) * c2 * sg *
                          std::pow(std::max(s, kModeClamp), b - 3.0);
        grads.mu[d] += sgr * dg_dmu + shs * dh_dmu;

        // Both terms carry 1/(2 sigma^2) = exp(-2 log sigma)/2.
        grads.log_sigma[d] += sgr * (-2.0 * gq) + shs * (-2.0 * hq);

        // Shape chain: beta = 1 + softplus(free).
        const double logs = std::log(std::max(s, kModeClamp));
        const double logst = std::log(st);
        const double dg_db = (s > 0.0) ? gq * (1.0 / b + logs) : 0.0;
        const double dh_db = hq * ((2.0 * b - 1.0) / (b * (b - 1.0)) + logst);
        grads.beta_free[d] += (sgr * dg_db + shs * dh_db) * softplus_d1(p.beta_free[d]);
    }
}

}  // namespace deepkexp
