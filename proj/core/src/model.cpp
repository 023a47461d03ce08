#include "deepkexp/model.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <thread>

#include "deepkexp/errors.hpp"

namespace deepkexp {

double RegWeights::lambda_alpha() const {
    return std::exp(log_lambda_alpha);
}

double RegWeights::lambda_c() const {
    return std::exp(log_lambda_c);
}

double RegWeights::lambda_h() const {
    return std::exp(log_lambda_h);  // exp(-inf) = 0 for the disabled default
}

RegWeights RegWeights::defaults() {
    return from_values(1e-3, 1e-3, 0.0);
}

RegWeights RegWeights::from_values(double la, double lc, double lh) {
    RegWeights r;
    r.log_lambda_alpha = std::log(la);
    r.log_lambda_c = std::log(lc);
    r.log_lambda_h = lh > 0.0 ? std::log(lh) : -std::numeric_limits<double>::infinity();
    return r;
}

double model_f(const FittedModel& m, const Vector& x) {
    if (x.size() != m.dim()) {
        throw ShapeMismatch("model_f: point dimension mismatch");
    }
    auto fx = kernel_features(m.kernel, x.data());
    auto phi_z = kernel_feature_table(m.kernel, m.inducing);
    Vector kv;
    kernel_slabs(m.kernel, fx, phi_z, &kv, nullptr, nullptr);
    double f = 0.0;
    for (std::size_t i = 0; i < kv.size(); ++i) {
        f += m.alpha[i] * kv[i];
    }
    return f;
}

double log_p_tilde(const FittedModel& m, const Vector& x) {
    return model_f(m, x) + base_log_density(m.base, x.data());
}

Vector grad_log_p_tilde(const FittedModel& m, const Vector& x) {
    if (x.size() != m.dim()) {
        throw ShapeMismatch("grad_log_p_tilde: point dimension mismatch");
    }
    auto fx = kernel_features(m.kernel, x.data());
    auto phi_z = kernel_feature_table(m.kernel, m.inducing);
    Matrix grad;
    kernel_slabs(m.kernel, fx, phi_z, nullptr, &grad, nullptr);
    Vector out = base_grad(m.base, x);
    for (std::size_t d = 0; d < m.dim(); ++d) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m.inducing_count(); ++i) {
            acc += m.alpha[i] * grad(i, d);
        }
        out[d] += acc;
    }
    return out;
}

Vector hess_diag_log_p_tilde(const FittedModel& m, const Vector& x) {
    if (x.size() != m.dim()) {
        throw ShapeMismatch("hess_diag_log_p_tilde: point dimension mismatch");
    }
    auto fx = kernel_features(m.kernel, x.data());
    auto phi_z = kernel_feature_table(m.kernel, m.inducing);
    Matrix hess;
    kernel_slabs(m.kernel, fx, phi_z, nullptr, nullptr, &hess);
    Vector out = base_hess_diag(m.base, x);
    for (std::size_t d = 0; d < m.dim(); ++d) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m.inducing_count(); ++i) {
            acc += m.alpha[i] * hess(i, d);
        }
        out[d] += acc;
    }
    return out;
}

double log_p_tilde_raw(const FittedModel& m, const Vector& x_raw) {
    return log_p_tilde(m, whiten(m.whitening, x_raw)) + m.whitening.log_abs_det;
}

Vector grad_log_p_tilde_raw(const FittedModel& m, const Vector& x_raw) {
    Vector g = grad_log_p_tilde(m, whiten(m.whitening, x_raw));
    return pullback_grad(m.whitening, g);
}

namespace {

struct PartialSums {
    Matrix grad_prod;
    Matrix curv_prod;
    Vector rhs;
    Vector rhs_curv;

    explicit PartialSums(std::size_t m)
        : grad_prod(m, m), curv_prod(m, m), rhs(m, 0.0), rhs_curv(m, 0.0) {}

    void merge(const PartialSums& o) {
        for (std::size_t i = 0; i < grad_prod.size(); ++i) {
            grad_prod.data()[i] += o.grad_prod.data()[i];
            curv_prod.data()[i] += o.curv_prod.data()[i];
        }
        for (std::size_t i = 0; i < rhs.size(); ++i) {
            rhs[i] += o.rhs[i];
            rhs_curv[i] += o.rhs_curv[i];
        }
    }
};

// Accumulates one data point's derivative slabs in O(M D) workspace.
void accumulate_point(const KernelParams& kp, const BaseDensityParams& bp,
                      const std::vector<Matrix>& phi_z, const double* x, PartialSums& acc,
                      Matrix& grad_slab, Matrix& hess_slab, Vector& gq, Vector& hq) {
    const std::size_t m = acc.rhs.size();
    const std::size_t d_in = kp.input_dim;

    auto fx = kernel_features(kp, x);
    kernel_slabs(kp, fx, phi_z, nullptr, &grad_slab, &hess_slab);
    base_grad(bp, x, gq.data());
    base_hess_diag(bp, x, hq.data());

    for (std::size_t i = 0; i < m; ++i) {
        const double* gi = grad_slab.row(i);
        const double* hi = hess_slab.row(i);
        for (std::size_t j = i; j < m; ++j) {
            const double* gj = grad_slab.row(j);
            const double* hj = hess_slab.row(j);
            double ag = 0.0;
            double ah = 0.0;
            for (std::size_t d = 0; d < d_in; ++d) {
                ag += gi[d] * gj[d];
                ah += hi[d] * hj[d];
            }
            acc.grad_prod(i, j) += ag;
            acc.curv_prod(i, j) += ah;
        }
        double ar = 0.0;
        double ac = 0.0;
        for (std::size_t d = 0; d < d_in; ++d) {
            ar += hi[d] + gq[d] * gi[d];
            ac += hq[d] * hi[d];
        }
        acc.rhs[i] += ar;
        acc.rhs_curv[i] += ac;
    }
}

}  // namespace

ScoreMatrices assemble(const KernelParams& kp, const BaseDensityParams& bp,
                       const Matrix& inducing, const Matrix& batch, std::size_t n_threads) {
    if (batch.rows() == 0) {
        throw EmptyBatch("assemble: empty data batch");
    }
    if (batch.cols() != kp.input_dim || inducing.cols() != kp.input_dim ||
        bp.dim() != kp.input_dim) {
        throw ShapeMismatch("assemble: dimension mismatch between kernel, base and data");
    }
    const std::size_t m = inducing.rows();
    const std::size_t n = batch.rows();
    const std::size_t d_in = kp.input_dim;
    const auto phi_z = kernel_feature_table(kp, inducing);

    const std::size_t workers = std::max<std::size_t>(1, std::min(n_threads, n));
    std::vector<PartialSums> parts;
    parts.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        parts.emplace_back(m);
    }

    auto run_chunk = [&](std::size_t w, std::size_t lo, std::size_t hi) {
        Matrix grad_slab, hess_slab;
        Vector gq(d_in), hq(d_in);
        for (std::size_t i = lo; i < hi; ++i) {
            accumulate_point(kp, bp, phi_z, batch.row(i), parts[w], grad_slab, hess_slab, gq, hq);
        }
    };

    if (workers == 1) {
        run_chunk(0, 0, n);
    } else {
        // Fixed chunk boundaries: the merge order below is deterministic for a
        // given thread count.
        const std::size_t chunk = (n + workers - 1) / workers;
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t lo = w * chunk;
            const std::size_t hi = std::min(n, lo + chunk);
            if (lo < hi) {
                pool.emplace_back(run_chunk, w, lo, hi);
            }
        }
        for (auto& t : pool) {
            t.join();
        }
        for (std::size_t w = 1; w < workers; ++w) {
            parts[0].merge(parts[w]);
        }
    }

    ScoreMatrices sm;
    sm.grad_prod = std::move(parts[0].grad_prod);
    sm.curv_prod = std::move(parts[0].curv_prod);
    sm.rhs = std::move(parts[0].rhs);
    sm.rhs_curv = std::move(parts[0].rhs_curv);

    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i; j < m; ++j) {
            sm.grad_prod(i, j) *= inv_n;
            sm.curv_prod(i, j) *= inv_n;
            sm.grad_prod(j, i) = sm.grad_prod(i, j);
            sm.curv_prod(j, i) = sm.curv_prod(i, j);
        }
        sm.rhs[i] *= inv_n;
        sm.rhs_curv[i] *= inv_n;
    }
    sm.gram = kernel_gram(kp, inducing);
    return sm;
}

Vector solve_alpha(const ScoreMatrices& sm, const RegWeights& reg) {
    const std::size_t m = sm.rhs.size();
    const double la = reg.lambda_alpha();
    const double lc = reg.lambda_c();
    const double lh = reg.lambda_h();
    if (!(la > 0.0)) {
        throw UsageError("solve_alpha: lambda_alpha must be positive");
    }

    Matrix a = sm.grad_prod;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            a(i, j) += lc * sm.curv_prod(i, j);
            if (lh > 0.0) {
                a(i, j) += lh * sm.gram(i, j);
            }
        }
        a(i, i) += la;
    }
    Vector b(m);
    for (std::size_t i = 0; i < m; ++i) {
        b[i] = sm.rhs[i] + lc * sm.rhs_curv[i];
    }
    Vector x = spd_solve(a, b);
    for (double& v : x) {
        v = -v;
    }
    return x;
}

double score_loss(const FittedModel& m, const Matrix& batch) {
    if (batch.rows() == 0) {
        throw EmptyBatch("score_loss: empty data batch");
    }
    if (batch.cols() != m.dim()) {
        throw ShapeMismatch("score_loss: batch dimension mismatch");
    }
    const std::size_t d_in = m.dim();
    const auto phi_z = kernel_feature_table(m.kernel, m.inducing);

    double total = 0.0;
    Matrix grad_slab, hess_slab;
    Vector gq(d_in), hq(d_in);
    for (std::size_t nrow = 0; nrow < batch.rows(); ++nrow) {
        const double* x = batch.row(nrow);
        auto fx = kernel_features(m.kernel, x);
        kernel_slabs(m.kernel, fx, phi_z, nullptr, &grad_slab, &hess_slab);
        base_grad(m.base, x, gq.data());
        base_hess_diag(m.base, x, hq.data());
        for (std::size_t d = 0; d < d_in; ++d) {
            double t1 = gq[d];
            double t2 = hq[d];
            for (std::size_t i = 0; i < m.inducing_count(); ++i) {
                t1 += m.alpha[i] * grad_slab(i, d);
                t2 += m.alpha[i] * hess_slab(i, d);
            }
            total += t2 + 0.5 * t1 * t1;
        }
    }
    return total / static_cast<double>(batch.rows());
}

double regularized_loss(const FittedModel& m, const Matrix& batch, const RegWeights& reg) {
    if (batch.rows() == 0) {
        throw EmptyBatch("regularized_loss: empty data batch");
    }
    const std::size_t d_in = m.dim();
    const double la = reg.lambda_alpha();
    const double lc = reg.lambda_c();
    const double lh = reg.lambda_h();
    const auto phi_z = kernel_feature_table(m.kernel, m.inducing);

    double total = 0.0;
    double curv_sq = 0.0;
    Matrix grad_slab, hess_slab;
    Vector gq(d_in), hq(d_in);
    for (std::size_t nrow = 0; nrow < batch.rows(); ++nrow) {
        const double* x = batch.row(nrow);
        auto fx = kernel_features(m.kernel, x);
        kernel_slabs(m.kernel, fx, phi_z, nullptr, &grad_slab, &hess_slab);
        base_grad(m.base, x, gq.data());
        base_hess_diag(m.base, x, hq.data());
        for (std::size_t d = 0; d < d_in; ++d) {
            double t1 = gq[d];
            double t2 = hq[d];
            for (std::size_t i = 0; i < m.inducing_count(); ++i) {
                t1 += m.alpha[i] * grad_slab(i, d);
                t2 += m.alpha[i] * hess_slab(i, d);
            }
            total += t2 + 0.5 * t1 * t1;
            curv_sq += t2 * t2;
        }
    }
    const double n = static_cast<double>(batch.rows());
    double loss = total / n + lc / (2.0 * n) * curv_sq;

    double asq = 0.0;
    for (double v : m.alpha) {
        asq += v * v;
    }
    loss += 0.5 * la * asq;
    if (lh > 0.0) {
        Matrix k = kernel_gram(m.kernel, m.inducing);
        Vector ka = matvec(k, m.alpha);
        loss += 0.5 * lh * dot(m.alpha, ka);
    }
    return loss;
}

}  // namespace deepkexp
