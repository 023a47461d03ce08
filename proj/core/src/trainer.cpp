#include "deepkexp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <utility>

#include "deepkexp/eigensym.hpp"
#include "deepkexp/errors.hpp"
#include "deepkexp/rng.hpp"
#include "deepkexp/whitening.hpp"

namespace deepkexp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Bandwidth ladder: pinned triple for three components, otherwise a geometric
// sweep over one decade.
Vector sigma_ladder(std::size_t r_count) {
    if (r_count == 3) return {1.0, 3.3, 10.0};
    Vector s(r_count, 1.0);
    for (std::size_t r = 1; r < r_count; ++r) {
        s[r] = std::pow(10.0, static_cast<double>(r) / static_cast<double>(r_count - 1));
    }
    return s;
}

Matrix gather_rows(const Matrix& data, const std::size_t* idx, std::size_t count) {
    Matrix out(count, data.cols());
    for (std::size_t i = 0; i < count; ++i) {
        const double* src = data.row(idx[i]);
        std::copy(src, src + data.cols(), out.row(i));
    }
    return out;
}

// Row-major draw order keeps reruns byte-identical.
void add_noise(Matrix& rows, double stddev, Rng& rng) {
    if (stddev <= 0.0) return;
    double* p = rows.data();
    for (std::size_t i = 0; i < rows.size(); ++i) p[i] += stddev * rng.normal();
}

Matrix reg_system(const ScoreMatrices& sm, const RegWeights& reg) {
    Matrix a = sm.grad_prod;
    const double lc = reg.lambda_c();
    const double lh = reg.lambda_h();
    double* ap = a.data();
    const double* up = sm.curv_prod.data();
    for (std::size_t i = 0; i < a.size(); ++i) ap[i] += lc * up[i];
    if (lh > 0.0) {
        const double* kp = sm.gram.data();
        for (std::size_t i = 0; i < a.size(); ++i) ap[i] += lh * kp[i];
    }
    const double la = reg.lambda_alpha();
    for (std::size_t j = 0; j < a.rows(); ++j) a(j, j) += la;
    return a;
}

Vector reg_rhs(const ScoreMatrices& sm, const RegWeights& reg) {
    Vector b = sm.rhs;
    const double lc = reg.lambda_c();
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += lc * sm.rhs_curv[i];
    return b;
}

struct ValPass {
    double objective = kNaN;
    Vector galpha;  // d objective / d alpha
};

// Score loss of the fitted coefficients on a held-out batch, plus its alpha
// gradient. t1/t2 are the first and second log-density derivative stacks.
ValPass val_pass(const KernelParams& kp, const BaseDensityParams& bp,
                 const std::vector<Matrix>& phi_z, const Vector& alpha, const Matrix& val) {
    const std::size_t m_count = alpha.size();
    const std::size_t dim = kp.input_dim;
    const std::size_t n = val.rows();
    if (n == 0) throw EmptyBatch("val_pass: empty validation batch");
    ValPass out;
    out.objective = 0.0;
    out.galpha.assign(m_count, 0.0);
    Matrix p(m_count, dim), q(m_count, dim);
    Vector gq(dim), hq(dim), t1(dim);
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = val.row(i);
        auto fx = kernel_features(kp, x);
        kernel_slabs(kp, fx, phi_z, nullptr, &p, &q);
        base_grad(bp, x, gq.data());
        base_hess_diag(bp, x, hq.data());
        for (std::size_t d = 0; d < dim; ++d) t1[d] = gq[d];
        for (std::size_t m = 0; m < m_count; ++m) {
            const double* pr = p.row(m);
            for (std::size_t d = 0; d < dim; ++d) t1[d] += alpha[m] * pr[d];
        }
        double acc = 0.0;
        for (std::size_t d = 0; d < dim; ++d) acc += hq[d] + 0.5 * t1[d] * t1[d];
        for (std::size_t m = 0; m < m_count; ++m) {
            const double* pr = p.row(m);
            const double* qr = q.row(m);
            double qs = 0.0;
            double gs = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                qs += qr[d];
                gs += qr[d] + t1[d] * pr[d];
            }
            acc += alpha[m] * qs;
            out.galpha[m] += gs;
        }
        out.objective += acc;
    }
    out.objective /= static_cast<double>(n);
    for (std::size_t m = 0; m < m_count; ++m) out.galpha[m] /= static_cast<double>(n);
    return out;
}

struct LambdaEval {
    double objective = kNaN;
    double lla_bar = 0.0;
    double llc_bar = 0.0;
    double llh_bar = 0.0;
};

// Objective and log-regularizer gradients with the score matrices held fixed;
// only the linear solve depends on the regularizers.
LambdaEval lambda_eval(const ScoreMatrices& sm, const KernelParams& kp,
                       const BaseDensityParams& bp, const std::vector<Matrix>& phi_z,
                       const RegWeights& reg, const Matrix& val, bool grad_lh) {
    Matrix a = reg_system(sm, reg);
    Vector b = reg_rhs(sm, reg);
    SpdFactor factor(a);
    Vector alpha = factor.solve(b);
    for (double& v : alpha) v = -v;
    ValPass vp = val_pass(kp, bp, phi_z, alpha, val);
    Vector u = factor.solve(vp.galpha);
    Vector ua = matvec(sm.curv_prod, alpha);
    LambdaEval out;
    out.objective = vp.objective;
    out.lla_bar = -dot(u, alpha) * reg.lambda_alpha();
    out.llc_bar = (-dot(u, ua) - dot(u, sm.rhs_curv)) * reg.lambda_c();
    if (grad_lh) {
        Vector ka = matvec(sm.gram, alpha);
        out.llh_bar = -dot(u, ka) * reg.lambda_h();
    }
    return out;
}

// One fixed flattening order shared by the parameter state and its gradient:
// kernel scalars, base scalars, inducing points row-major, then the three
// log regularizer weights.
std::vector<double*> collect_slots(KernelParams& kp, BaseDensityParams& bp, Matrix& inducing,
                                   double* lla, double* llc, double* llh) {
    std::vector<double*> s;
    kernel_collect_scalars(kp, s);
    base_collect_scalars(bp, s);
    double* ip = inducing.data();
    for (std::size_t i = 0; i < inducing.size(); ++i) s.push_back(ip + i);
    s.push_back(lla);
    s.push_back(llc);
    s.push_back(llh);
    return s;
}

Vector flatten_grad(MetaGrad& g) {
    auto slots = collect_slots(g.kernel, g.base, g.inducing, &g.log_lambda_alpha,
                               &g.log_lambda_c, &g.log_lambda_h);
    Vector out(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) out[i] = *slots[i];
    return out;
}

class Adam {
  public:
    Adam(std::size_t n, double lr, double b1, double b2, double eps)
        : lr_(lr), b1_(b1), b2_(b2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

    void step(const std::vector<double*>& slots, const Vector& grad) {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < slots.size(); ++i) {
            const double g = grad[i];
            m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
            v_[i] = b2_ * v_[i] + (1.0 - b2_) * g * g;
            *slots[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
        }
    }

    void halve_lr() { lr_ *= 0.5; }

  private:
    double lr_, b1_, b2_, eps_;
    Vector m_, v_;
    std::uint64_t t_ = 0;
};

// Epoch-style minibatch source: walks a shuffled index list, reshuffling
// whenever the remainder cannot host the next request.
class BatchStream {
  public:
    BatchStream(std::vector<std::size_t> idx, Rng rng) : idx_(std::move(idx)), rng_(rng) {
        rng_.shuffle(idx_);
    }

    const std::size_t* take(std::size_t k) {
        if (cursor_ + k > idx_.size()) {
            rng_.shuffle(idx_);
            cursor_ = 0;
        }
        const std::size_t* out = idx_.data() + cursor_;
        cursor_ += k;
        return out;
    }

  private:
    std::vector<std::size_t> idx_;
    std::size_t cursor_ = 0;
    Rng rng_;
};

bool all_finite(const Vector& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_dataset(std::size_t n_rows,
                                                                            std::uint64_t seed) {
    std::vector<std::size_t> perm(n_rows);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(perm);
    std::size_t n_val = std::min<std::size_t>(n_rows / 10, 1000);
    if (n_val == 0 && n_rows > 1) n_val = 1;
    std::vector<std::size_t> d2(perm.begin(), perm.begin() + n_val);
    std::vector<std::size_t> d1(perm.begin() + n_val, perm.end());
    return {std::move(d1), std::move(d2)};
}

double stage_objective(const ModelState& st, const Matrix& train_batch, const Matrix& val_batch) {
    ScoreMatrices sm = assemble(st.kernel, st.base, st.inducing, train_batch);
    Vector alpha = solve_alpha(sm, st.reg);
    std::vector<Matrix> phi_z = kernel_feature_table(st.kernel, st.inducing);
    return val_pass(st.kernel, st.base, phi_z, alpha, val_batch).objective;
}

MetaGrad meta_gradient(const ModelState& st, const Matrix& train_batch, const Matrix& val_batch,
                       bool grad_lambda_h) {
    const KernelParams& kp = st.kernel;
    const BaseDensityParams& bp = st.base;
    const Matrix& z = st.inducing;
    const std::size_t dim = kp.input_dim;
    const std::size_t m_count = z.rows();
    const std::size_t r_count = kp.components();
    const std::size_t nt = train_batch.rows();
    const std::size_t nv = val_batch.rows();
    if (train_batch.cols() != dim || val_batch.cols() != dim) {
        throw DimensionMismatch("meta_gradient: batch width does not match kernel input");
    }
    if (nt == 0 || nv == 0) throw EmptyBatch("meta_gradient: empty batch");

    const double lc = st.reg.lambda_c();
    const double lh = st.reg.lambda_h();

    ScoreMatrices sm = assemble(kp, bp, z, train_batch);
    Matrix a = reg_system(sm, st.reg);
    Vector b = reg_rhs(sm, st.reg);
    SpdFactor factor(a);
    Vector alpha = factor.solve(b);
    for (double& v : alpha) v = -v;

    std::vector<Matrix> phi_z = kernel_feature_table(kp, z);

    MetaGrad out;
    out.kernel = kernel_zeros_like(kp);
    out.base = base_zeros_like(bp);
    out.inducing = Matrix(m_count, dim);

    // Value sensitivities on the inducing-side features, pooled across every
    // kernel use and pulled back through the feature maps once at the end.
    std::vector<Matrix> phi_z_sens;
    phi_z_sens.reserve(r_count);
    for (std::size_t r = 0; r < r_count; ++r) {
        phi_z_sens.emplace_back(m_count, kp.feature_dim(r));
    }
    Vector rho_bar(r_count, 0.0);
    Vector gamma_bar(r_count, 0.0);

    auto absorb = [&](const KernelBack& back, const std::vector<FeatureEval>* fx) {
        for (std::size_t r = 0; r < r_count; ++r) {
            if (fx != nullptr && kp.nets[r]) {
                net_param_gradients(*kp.nets[r], *(*fx)[r].net, &back.s_phi_x[r],
                                    &back.s_jac_x[r], &back.s_hess_x[r], *out.kernel.nets[r]);
            }
            double* dst = phi_z_sens[r].data();
            const double* src = back.s_phi_y[r].data();
            for (std::size_t i = 0; i < phi_z_sens[r].size(); ++i) dst[i] += src[i];
            rho_bar[r] += back.rho_bar[r];
            gamma_bar[r] += back.gamma_bar[r];
        }
    };

    // Validation pass: objective, alpha gradient, and the direct dependence of
    // the held-out score loss on kernel and base parameters.
    double objective = 0.0;
    Vector galpha(m_count, 0.0);
    {
        Matrix p(m_count, dim), q(m_count, dim);
        Matrix sp(m_count, dim), sq(m_count, dim);
        Vector gq(dim), hq(dim), t1(dim), s_gq(dim), s_hq(dim);
        const double inv_nv = 1.0 / static_cast<double>(nv);
        for (std::size_t i = 0; i < nv; ++i) {
            const double* x = val_batch.row(i);
            auto fx = kernel_features(kp, x);
            kernel_slabs(kp, fx, phi_z, nullptr, &p, &q);
            base_grad(bp, x, gq.data());
            base_hess_diag(bp, x, hq.data());
            for (std::size_t d = 0; d < dim; ++d) t1[d] = gq[d];
            for (std::size_t m = 0; m < m_count; ++m) {
                const double* pr = p.row(m);
                for (std::size_t d = 0; d < dim; ++d) t1[d] += alpha[m] * pr[d];
            }
            double acc = 0.0;
            for (std::size_t d = 0; d < dim; ++d) acc += hq[d] + 0.5 * t1[d] * t1[d];
            for (std::size_t m = 0; m < m_count; ++m) {
                const double* pr = p.row(m);
                const double* qr = q.row(m);
                double qs = 0.0;
                double gs = 0.0;
                for (std::size_t d = 0; d < dim; ++d) {
                    qs += qr[d];
                    gs += qr[d] + t1[d] * pr[d];
                }
                acc += alpha[m] * qs;
                galpha[m] += gs;
            }
            objective += acc;

            for (std::size_t m = 0; m < m_count; ++m) {
                double* spr = sp.row(m);
                double* sqr = sq.row(m);
                for (std::size_t d = 0; d < dim; ++d) {
                    spr[d] = alpha[m] * t1[d] * inv_nv;
                    sqr[d] = alpha[m] * inv_nv;
                }
            }
            for (std::size_t d = 0; d < dim; ++d) {
                s_gq[d] = t1[d] * inv_nv;
                s_hq[d] = inv_nv;
            }
            KernelBack back = KernelBack::zeros(kp, m_count);
            kernel_slabs_backward(kp, fx, phi_z, nullptr, &sp, &sq, back);
            absorb(back, &fx);
            base_backward(bp, x, s_gq.data(), s_hq.data(), out.base);
        }
        objective /= static_cast<double>(nv);
        for (std::size_t m = 0; m < m_count; ++m) galpha[m] /= static_cast<double>(nv);
    }
    out.objective = objective;

    Vector u = factor.solve(galpha);

    // Regularizer chains; alpha = -A^{-1} b gives dJ/dtheta = -u^T (dA alpha + db).
    {
        Vector ua = matvec(sm.curv_prod, alpha);
        out.log_lambda_alpha = -dot(u, alpha) * st.reg.lambda_alpha();
        out.log_lambda_c = (-dot(u, ua) - dot(u, sm.rhs_curv)) * lc;
        if (grad_lambda_h) {
            Vector ka = matvec(sm.gram, alpha);
            out.log_lambda_h = -dot(u, ka) * lh;
        }
    }

    // Fitting path: the score matrices and right-hand side on the training
    // batch depend on every parameter through the per-point kernel slabs.
    {
        Matrix p(m_count, dim), q(m_count, dim);
        Matrix sp(m_count, dim), sq(m_count, dim);
        Vector gq(dim), hq(dim), s_gq(dim), s_hq(dim);
        Vector pa(dim), pu(dim), qa(dim), qu(dim);
        const double inv_nt = 1.0 / static_cast<double>(nt);
        for (std::size_t i = 0; i < nt; ++i) {
            const double* x = train_batch.row(i);
            auto fx = kernel_features(kp, x);
            kernel_slabs(kp, fx, phi_z, nullptr, &p, &q);
            base_grad(bp, x, gq.data());
            base_hess_diag(bp, x, hq.data());
            for (std::size_t d = 0; d < dim; ++d) {
                pa[d] = pu[d] = qa[d] = qu[d] = 0.0;
            }
            for (std::size_t m = 0; m < m_count; ++m) {
                const double* pr = p.row(m);
                const double* qr = q.row(m);
                for (std::size_t d = 0; d < dim; ++d) {
                    pa[d] += alpha[m] * pr[d];
                    pu[d] += u[m] * pr[d];
                    qa[d] += alpha[m] * qr[d];
                    qu[d] += u[m] * qr[d];
                }
            }
            for (std::size_t m = 0; m < m_count; ++m) {
                double* spr = sp.row(m);
                double* sqr = sq.row(m);
                for (std::size_t d = 0; d < dim; ++d) {
                    spr[d] = -(u[m] * pa[d] + alpha[m] * pu[d] + u[m] * gq[d]) * inv_nt;
                    sqr[d] = -(lc * (u[m] * qa[d] + alpha[m] * qu[d]) + u[m] + lc * u[m] * hq[d]) *
                             inv_nt;
                }
            }
            for (std::size_t d = 0; d < dim; ++d) {
                s_gq[d] = -pu[d] * inv_nt;
                s_hq[d] = -lc * qu[d] * inv_nt;
            }
            KernelBack back = KernelBack::zeros(kp, m_count);
            kernel_slabs_backward(kp, fx, phi_z, nullptr, &sp, &sq, back);
            absorb(back, &fx);
            base_backward(bp, x, s_gq.data(), s_hq.data(), out.base);
        }
    }

    // Gram regularizer path; only present when its weight is live.
    if (lh > 0.0) {
        Matrix s_gram(m_count, m_count);
        for (std::size_t i = 0; i < m_count; ++i) {
            for (std::size_t j = 0; j < m_count; ++j) {
                s_gram(i, j) = -lh * u[i] * alpha[j];
            }
        }
        KernelBack back = KernelBack::zeros(kp, m_count);
        kernel_gram_backward(kp, phi_z, s_gram, back);
        absorb(back, nullptr);
    }

    // Pooled feature-value sensitivities pull back to the inducing points via
    // each feature Jacobian, and to the feature nets via their parameters.
    {
        Vector s_row;
        for (std::size_t m = 0; m < m_count; ++m) {
            auto fz = kernel_features(kp, z.row(m));
            for (std::size_t r = 0; r < r_count; ++r) {
                const Matrix& sens = phi_z_sens[r];
                const std::size_t w = kp.feature_dim(r);
                double* zrow = out.inducing.row(m);
                for (std::size_t k = 0; k < w; ++k) {
                    const double sv = sens(m, k);
                    if (sv == 0.0) continue;
                    const double* jr = fz[r].jac.row(k);
                    for (std::size_t d = 0; d < dim; ++d) zrow[d] += sv * jr[d];
                }
                if (kp.nets[r]) {
                    const double* sr = sens.row(m);
                    s_row.assign(sr, sr + w);
                    net_param_gradients(*kp.nets[r], *fz[r].net, &s_row, nullptr, nullptr,
                                        *out.kernel.nets[r]);
                }
            }
        }
    }

    Vector weights = kp.mixture_weights();
    Vector rho_free_bar = softmax_backward(weights, rho_bar);
    for (std::size_t r = 0; r < r_count; ++r) {
        out.kernel.rho_free[r] = rho_free_bar[r];
        out.kernel.log_sigma[r] = gamma_bar[r] * (-2.0 * kp.gamma(r));
    }

    return out;
}

std::pair<FittedModel, TrainReport> train(const Matrix& data, const TrainConfig& cfg,
                                          const ModelArch& arch, const InitOverrides& init) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n = data.rows();
    const std::size_t dim = data.cols();
    if (n == 0 || dim == 0) throw EmptyBatch("train: empty dataset");
    if (cfg.batch_train == 0 || cfg.batch_val == 0) {
        throw UsageError("train: batch sizes must be positive");
    }
    if (cfg.inducing_count == 0) throw UsageError("train: inducing_count must be positive");
    if (arch.components == 0) throw UsageError("train: need at least one kernel component");
    if (n < 4 * cfg.batch_train) {
        throw DatasetTooSmall("train: need at least " + std::to_string(4 * cfg.batch_train) +
                              " rows, got " + std::to_string(n));
    }

    auto [d1, d2] = split_dataset(n, cfg.seed);
    if (d1.size() < cfg.batch_train + cfg.batch_val) {
        throw DatasetTooSmall("train: fitting split cannot host disjoint batches");
    }

    Rng root(cfg.seed);
    Rng init_rng = root.fork(1);
    Rng s1_stream_rng = root.fork(2);
    Rng s1_noise = root.fork(3);
    Rng s2_noise = root.fork(4);
    Rng s2_stream_rng = root.fork(5);
    Rng s3_noise = root.fork(6);

    ModelState st;
    st.kernel.input_dim = dim;
    st.kernel.rho_free.assign(arch.components, 0.0);
    Vector sigmas = sigma_ladder(arch.components);
    if (init.sigmas) {
        if (init.sigmas->size() != arch.components) {
            throw ShapeMismatch("train: bandwidth override count does not match components");
        }
        sigmas = *init.sigmas;
    }
    st.kernel.log_sigma.resize(arch.components);
    for (std::size_t r = 0; r < arch.components; ++r) {
        if (!(sigmas[r] > 0.0)) throw UsageError("train: bandwidths must be positive");
        st.kernel.log_sigma[r] = std::log(sigmas[r]);
    }
    st.kernel.nets.resize(arch.components);
    if (!arch.identity_features) {
        NetSpec spec = arch.net;
        spec.input_dim = dim;
        for (std::size_t r = 0; r < arch.components; ++r) {
            st.kernel.nets[r] = net_init(spec, init_rng);
        }
    }
    if (init.base) {
        if (init.base->dim() != dim) {
            throw DimensionMismatch("train: base density dimension does not match data");
        }
        st.base = *init.base;
    } else {
        st.base = base_default(dim);
    }
    st.base.trainable = cfg.train_base;
    {
        std::vector<std::size_t> pool = d1;
        init_rng.shuffle(pool);
        const std::size_t m_count = std::min(cfg.inducing_count, pool.size());
        st.inducing = gather_rows(data, pool.data(), m_count);
    }
    st.reg = RegWeights::from_values(cfg.lambda_init, cfg.lambda_init,
                                     cfg.optimize_lambda_h ? cfg.lambda_init : 0.0);

    TrainReport rep;
    auto elapsed_ms = [&] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    };
    auto out_of_time = [&] {
        return cfg.max_wallclock_sec && elapsed_ms() / 1000.0 > *cfg.max_wallclock_sec;
    };

    std::size_t step = 0;

    // Stage 1: stochastic meta-optimization of everything against held-out
    // minibatches of the fitting split.
    double best1 = kInf;
    {
        ModelState snap = st;
        std::vector<double*> slots = collect_slots(st.kernel, st.base, st.inducing,
                                                   &st.reg.log_lambda_alpha,
                                                   &st.reg.log_lambda_c, &st.reg.log_lambda_h);
        const std::size_t n_kernel = st.kernel.scalar_count();
        const std::size_t n_base = st.base.scalar_count();
        Adam adam(slots.size(), cfg.lr_stage1, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        BatchStream stream(d1, s1_stream_rng);
        bool nan_last = false;
        std::size_t bad = 0;
        while (step < cfg.max_steps_stage1 && !out_of_time()) {
            const std::size_t* ids = stream.take(cfg.batch_train + cfg.batch_val);
            Matrix dt = gather_rows(data, ids, cfg.batch_train);
            Matrix dv = gather_rows(data, ids + cfg.batch_train, cfg.batch_val);
            add_noise(dt, cfg.data_noise_std, s1_noise);
            add_noise(dv, cfg.data_noise_std, s1_noise);

            double obj = kNaN;
            Vector grad;
            bool usable = false;
            try {
                MetaGrad g = meta_gradient(st, dt, dv, cfg.optimize_lambda_h);
                obj = g.objective;
                grad = flatten_grad(g);
                usable = std::isfinite(obj) && all_finite(grad);
            } catch (const SingularAfterJitter&) {
                usable = false;
            }
            rep.trace.push_back({step, 1, obj, elapsed_ms()});
            ++step;
            if (!usable) {
                if (nan_last) throw DivergedLoss("train: stage 1 objective diverged");
                nan_last = true;
                adam.halve_lr();
                continue;
            }
            nan_last = false;
            if (obj < best1) {
                best1 = obj;
                snap = st;
                bad = 0;
            } else if (++bad >= cfg.patience) {
                break;
            }
            if (!st.base.trainable) {
                for (std::size_t i = n_kernel; i < n_kernel + n_base; ++i) grad[i] = 0.0;
            }
            if (!cfg.optimize_lambda_h) grad.back() = 0.0;
            adam.step(slots, grad);
        }
        st = snap;
    }
    rep.stage1_steps = step;

    // Stage 2: the score matrices are fixed on the full fitting split (one
    // noise draw), and only the regularizer weights move against the held-out
    // split.
    double best2 = kInf;
    {
        Matrix d1_rows = gather_rows(data, d1.data(), d1.size());
        add_noise(d1_rows, cfg.data_noise_std, s2_noise);
        const ScoreMatrices sm1 = assemble(st.kernel, st.base, st.inducing, d1_rows, cfg.threads);
        const std::vector<Matrix> phi_z = kernel_feature_table(st.kernel, st.inducing);
        const std::size_t bv2 = std::min(cfg.batch_val, d2.size());
        if (bv2 > 0 && cfg.max_steps_stage2 > 0) {
            RegWeights snap_reg = st.reg;
            std::vector<double*> lslots{&st.reg.log_lambda_alpha, &st.reg.log_lambda_c};
            if (cfg.optimize_lambda_h) lslots.push_back(&st.reg.log_lambda_h);
            Adam adam(lslots.size(), cfg.lr_stage2, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
            BatchStream stream(d2, s2_stream_rng);
            bool nan_last = false;
            std::size_t bad = 0;
            std::size_t s2 = 0;
            while (s2 < cfg.max_steps_stage2 && !out_of_time()) {
                const std::size_t* ids = stream.take(bv2);
                Matrix dv = gather_rows(data, ids, bv2);
                double obj = kNaN;
                Vector grad;
                bool usable = false;
                try {
                    LambdaEval le = lambda_eval(sm1, st.kernel, st.base, phi_z, st.reg, dv,
                                                cfg.optimize_lambda_h);
                    obj = le.objective;
                    grad = {le.lla_bar, le.llc_bar};
                    if (cfg.optimize_lambda_h) grad.push_back(le.llh_bar);
                    usable = std::isfinite(obj) && all_finite(grad);
                } catch (const SingularAfterJitter&) {
                    usable = false;
                }
                rep.trace.push_back({step, 2, obj, elapsed_ms()});
                ++step;
                ++s2;
                if (!usable) {
                    if (nan_last) throw DivergedLoss("train: stage 2 objective diverged");
                    nan_last = true;
                    adam.halve_lr();
                    continue;
                }
                nan_last = false;
                if (obj < best2) {
                    best2 = obj;
                    snap_reg = st.reg;
                    bad = 0;
                } else if (++bad >= cfg.patience) {
                    break;
                }
                adam.step(lslots, grad);
            }
            st.reg = snap_reg;
            rep.stage2_steps = s2;
        }
    }

    // Stage 3: final closed-form fit on the full fitting split with a fresh
    // noise draw.
    Matrix d1_rows = gather_rows(data, d1.data(), d1.size());
    add_noise(d1_rows, cfg.data_noise_std, s3_noise);
    ScoreMatrices sm3 = assemble(st.kernel, st.base, st.inducing, d1_rows, cfg.threads);
    Vector alpha = solve_alpha(sm3, st.reg);

    FittedModel model{st.kernel, st.base, st.inducing, std::move(alpha),
                      whitening_identity(dim)};
    if (std::isfinite(best2)) {
        rep.final_val_objective = best2;
    } else if (std::isfinite(best1)) {
        rep.final_val_objective = best1;
    } else {
        rep.final_val_objective = kNaN;
    }
    rep.wallclock_sec = elapsed_ms() / 1000.0;
    return {std::move(model), std::move(rep)};
}

namespace {

struct KMeansResult {
    std::vector<std::size_t> labels;
    bool ok = false;
};

// Lloyd iterations from a random distinct-row start. Ties in the assignment
// go to the lowest-index center, so reruns are deterministic.
KMeansResult kmeans(const Matrix& pts, std::size_t k, Rng& rng) {
    const std::size_t n = pts.rows();
    const std::size_t d = pts.cols();
    KMeansResult res;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    Matrix centers(k, d);
    for (std::size_t c = 0; c < k; ++c) {
        const double* src = pts.row(order[c]);
        std::copy(src, src + d, centers.row(c));
    }
    std::vector<std::size_t> labels(n, 0);
    std::vector<std::size_t> prev(n, SIZE_MAX);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t iter = 0; iter < 100; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            const double* x = pts.row(i);
            double best = kInf;
            std::size_t arg = 0;
            for (std::size_t c = 0; c < k; ++c) {
                const double* ce = centers.row(c);
                double dist = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double diff = x[j] - ce[j];
                    dist += diff * diff;
                }
                if (dist < best) {
                    best = dist;
                    arg = c;
                }
            }
            labels[i] = arg;
        }
        if (labels == prev) break;
        prev = labels;
        std::fill(counts.begin(), counts.end(), std::size_t{0});
        centers.fill(0.0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[labels[i]];
            double* ce = centers.row(labels[i]);
            const double* x = pts.row(i);
            for (std::size_t j = 0; j < d; ++j) ce[j] += x[j];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) return res;
            double* ce = centers.row(c);
            for (std::size_t j = 0; j < d; ++j) ce[j] /= static_cast<double>(counts[c]);
        }
    }
    std::fill(counts.begin(), counts.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) ++counts[labels[i]];
    for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] == 0) return res;
    }
    res.labels = std::move(labels);
    res.ok = true;
    return res;
}

}  // namespace

std::vector<std::size_t> spectral_cluster(const Matrix& data, std::size_t n_clusters,
                                          std::uint64_t seed) {
    const std::size_t n = data.rows();
    if (n_clusters == 0) throw UsageError("spectral_cluster: need at least one cluster");
    if (n == 0) throw EmptyBatch("spectral_cluster: empty dataset");
    if (n_clusters == 1) return std::vector<std::size_t>(n, 0);
    if (n < n_clusters) throw EmptyCluster("spectral_cluster: fewer rows than clusters");

    // The dense eigenproblem is cubic, so large inputs are clustered on a
    // subsample and the rest assigned to the nearest cluster mean.
    constexpr std::size_t kEigenCap = 2000;
    Rng rng(seed);
    std::vector<std::size_t> sub(n);
    std::iota(sub.begin(), sub.end(), std::size_t{0});
    if (n > kEigenCap) {
        rng.shuffle(sub);
        sub.resize(kEigenCap);
        std::sort(sub.begin(), sub.end());
    }
    const std::size_t ns = sub.size();
    const std::size_t dim = data.cols();

    // Median squared pairwise distance = squared median distance.
    double h2 = 1.0;
    {
        std::vector<double> d2s;
        d2s.reserve(ns * (ns - 1) / 2);
        for (std::size_t i = 0; i < ns; ++i) {
            const double* xi = data.row(sub[i]);
            for (std::size_t j = i + 1; j < ns; ++j) {
                const double* xj = data.row(sub[j]);
                double d2 = 0.0;
                for (std::size_t d = 0; d < dim; ++d) {
                    const double diff = xi[d] - xj[d];
                    d2 += diff * diff;
                }
                d2s.push_back(d2);
            }
        }
        if (!d2s.empty()) {
            const std::size_t mid = (d2s.size() - 1) / 2;
            std::nth_element(d2s.begin(), d2s.begin() + mid, d2s.end());
            if (d2s[mid] > 0.0) h2 = d2s[mid];
        }
    }

    Matrix aff(ns, ns);
    for (std::size_t i = 0; i < ns; ++i) {
        const double* xi = data.row(sub[i]);
        for (std::size_t j = i + 1; j < ns; ++j) {
            const double* xj = data.row(sub[j]);
            double d2 = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = xi[d] - xj[d];
                d2 += diff * diff;
            }
            const double v = std::exp(-d2 / (2.0 * h2));
            aff(i, j) = v;
            aff(j, i) = v;
        }
    }
    Vector deg(ns, 0.0);
    for (std::size_t i = 0; i < ns; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < ns; ++j) s += aff(i, j);
        deg[i] = s;
    }
    Matrix lap(ns, ns);
    for (std::size_t i = 0; i < ns; ++i) {
        for (std::size_t j = 0; j < ns; ++j) {
            double v = (i == j) ? 1.0 : 0.0;
            if (deg[i] > 0.0 && deg[j] > 0.0) {
                v -= aff(i, j) / std::sqrt(deg[i] * deg[j]);
            }
            lap(i, j) = v;
        }
    }
    SymEigen eig = sym_eigen(lap);

    // Bottom-eigenvector embedding, rows normalized to the unit sphere.
    Matrix emb(ns, n_clusters);
    for (std::size_t i = 0; i < ns; ++i) {
        double norm = 0.0;
        for (std::size_t c = 0; c < n_clusters; ++c) {
            const double v = eig.vectors(i, c);
            emb(i, c) = v;
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (norm > 0.0) {
            for (std::size_t c = 0; c < n_clusters; ++c) emb(i, c) /= norm;
        }
    }

    for (std::size_t attempt = 0; attempt < 5; ++attempt) {
        Rng krng = rng.fork(attempt);
        KMeansResult km = kmeans(emb, n_clusters, krng);
        if (!km.ok) continue;
        if (ns == n) return km.labels;

        Matrix means(n_clusters, dim);
        std::vector<std::size_t> counts(n_clusters, 0);
        for (std::size_t i = 0; i < ns; ++i) {
            ++counts[km.labels[i]];
            double* mr = means.row(km.labels[i]);
            const double* x = data.row(sub[i]);
            for (std::size_t d = 0; d < dim; ++d) mr[d] += x[d];
        }
        for (std::size_t c = 0; c < n_clusters; ++c) {
            double* mr = means.row(c);
            for (std::size_t d = 0; d < dim; ++d) mr[d] /= static_cast<double>(counts[c]);
        }
        std::vector<std::size_t> labels(n, 0);
        std::vector<bool> in_sub(n, false);
        for (std::size_t i = 0; i < ns; ++i) {
            labels[sub[i]] = km.labels[i];
            in_sub[sub[i]] = true;
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (in_sub[i]) continue;
            const double* x = data.row(i);
            double best = kInf;
            std::size_t arg = 0;
            for (std::size_t c = 0; c < n_clusters; ++c) {
                const double* mr = means.row(c);
                double d2 = 0.0;
                for (std::size_t d = 0; d < dim; ++d) {
                    const double diff = x[d] - mr[d];
                    d2 += diff * diff;
                }
                if (d2 < best) {
                    best = d2;
                    arg = c;
                }
            }
            labels[i] = arg;
        }
        return labels;
    }
    throw EmptyCluster("spectral_cluster: empty cluster after 5 restarts");
}

std::vector<MixtureComponent> fit_mixture(const Matrix& data, std::size_t n_clusters,
                                          const TrainConfig& cfg, const ModelArch& arch) {
    if (n_clusters == 0) throw UsageError("fit_mixture: need at least one cluster");
    if (n_clusters == 1) {
        auto fitted = train(data, cfg, arch);
        std::vector<MixtureComponent> out;
        out.push_back({std::move(fitted.first), 1.0});
        return out;
    }
    const std::vector<std::size_t> labels = spectral_cluster(data, n_clusters, cfg.seed);
    const std::size_t n = data.rows();
    std::vector<MixtureComponent> out;
    out.reserve(n_clusters);
    for (std::size_t c = 0; c < n_clusters; ++c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] == c) idx.push_back(i);
        }
        Matrix rows = gather_rows(data, idx.data(), idx.size());
        TrainConfig sub_cfg = cfg;
        sub_cfg.seed = cfg.seed + 0x9e3779b9ull * (c + 1);
        auto fitted = train(rows, sub_cfg, arch);
        out.push_back({std::move(fitted.first), static_cast<double>(idx.size()) /
                                                    static_cast<double>(n)});
    }
    return out;
}

double predicted_separated_ratio(std::size_t dim, double sigma, double lambda_alpha, double pi) {
    if (!(sigma > 0.0) || !(lambda_alpha > 0.0)) {
        throw UsageError("predicted_separated_ratio: sigma and lambda_alpha must be positive");
    }
    if (!(pi > 0.0 && pi < 1.0)) {
        throw UsageError("predicted_separated_ratio: pi must lie in (0, 1)");
    }
    return std::exp(static_cast<double>(dim) / (2.0 * sigma * sigma * lambda_alpha) * (pi - 0.5));
}

}  // namespace deepkexp
