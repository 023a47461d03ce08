#include "deepkexp/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "deepkexp/errors.hpp"

namespace deepkexp {

Vector KernelParams::mixture_weights() const {
    return softmax(rho_free);
}

double KernelParams::bandwidth(std::size_t r) const {
    return std::exp(log_sigma[r]);
}

double KernelParams::gamma(std::size_t r) const {
    return std::exp(-2.0 * log_sigma[r]);
}

std::size_t KernelParams::feature_dim(std::size_t r) const {
    return nets[r] ? nets[r]->spec.width : input_dim;
}

std::size_t KernelParams::scalar_count() const {
    std::size_t n = rho_free.size() + log_sigma.size();
    for (const auto& net : nets) {
        if (net) {
            n += net->scalar_count();
        }
    }
    return n;
}

KernelParams kernel_zeros_like(const KernelParams& p) {
    KernelParams z;
    z.input_dim = p.input_dim;
    z.rho_free.assign(p.rho_free.size(), 0.0);
    z.log_sigma.assign(p.log_sigma.size(), 0.0);
    for (const auto& net : p.nets) {
        if (net) {
            z.nets.push_back(net_zeros_like(*net));
        } else {
            z.nets.push_back(std::nullopt);
        }
    }
    return z;
}

void kernel_collect_scalars(KernelParams& p, std::vector<double*>& out) {
    for (double& x : p.rho_free) {
        out.push_back(&x);
    }
    for (double& x : p.log_sigma) {
        out.push_back(&x);
    }
    for (auto& net : p.nets) {
        if (net) {
            net_collect_scalars(*net, out);
        }
    }
}

Vector softmax(const Vector& logits) {
    double mx = logits[0];
    for (double v : logits) {
        mx = std::max(mx, v);
    }
    Vector s(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        s[i] = std::exp(logits[i] - mx);
        total += s[i];
    }
    for (double& v : s) {
        v /= total;
    }
    return s;
}

Vector softmax_backward(const Vector& sm, const Vector& sbar) {
    double inner = 0.0;
    for (std::size_t i = 0; i < sm.size(); ++i) {
        inner += sm[i] * sbar[i];
    }
    Vector out(sm.size());
    for (std::size_t i = 0; i < sm.size(); ++i) {
        out[i] = sm[i] * (sbar[i] - inner);
    }
    return out;
}

FeatureEval feature_eval(const std::optional<NetParams>& net, std::size_t input_dim,
                         const double* x) {
    FeatureEval fe;
    if (net) {
        NetEval ev = net_eval(*net, x);
        fe.phi = ev.phi;
        fe.jac = ev.jac;
        fe.hess = ev.hess;
        fe.net = std::move(ev);
    } else {
        fe.phi.assign(x, x + input_dim);
        fe.jac = Matrix(input_dim, input_dim);
        for (std::size_t d = 0; d < input_dim; ++d) {
            fe.jac(d, d) = 1.0;
        }
        fe.hess = Matrix(input_dim, input_dim);
    }
    return fe;
}

Vector feature_value(const std::optional<NetParams>& net, std::size_t input_dim,
                     const double* x) {
    if (net) {
        return net_eval(*net, x).phi;
    }
    return Vector(x, x + input_dim);
}

std::vector<FeatureEval> kernel_features(const KernelParams& p, const double* x) {
    std::vector<FeatureEval> out;
    out.reserve(p.components());
    for (std::size_t r = 0; r < p.components(); ++r) {
        out.push_back(feature_eval(p.nets[r], p.input_dim, x));
    }
    return out;
}

std::vector<Matrix> kernel_feature_table(const KernelParams& p, const Matrix& pts) {
    std::vector<Matrix> out;
    out.reserve(p.components());
    for (std::size_t r = 0; r < p.components(); ++r) {
        const std::size_t w = p.feature_dim(r);
        Matrix phi(pts.rows(), w);
        for (std::size_t m = 0; m < pts.rows(); ++m) {
            Vector v = feature_value(p.nets[r], p.input_dim, pts.row(m));
            std::copy(v.begin(), v.end(), phi.row(m));
        }
        out.push_back(std::move(phi));
    }
    return out;
}

void kernel_slabs(const KernelParams& p, const std::vector<FeatureEval>& fx,
                  const std::vector<Matrix>& phi_y, Vector* kv, Matrix* grad, Matrix* hess) {
    const std::size_t d_in = p.input_dim;
    const std::size_t n_pts = phi_y.empty() ? 0 : phi_y[0].rows();
    const Vector rho = p.mixture_weights();

    if (kv) {
        kv->assign(n_pts, 0.0);
    }
    if (grad) {
        *grad = Matrix(n_pts, d_in);
    }
    if (hess) {
        *hess = Matrix(n_pts, d_in);
    }

    Vector delta;
    for (std::size_t r = 0; r < p.components(); ++r) {
        const double gam = p.gamma(r);
        const double w_r = rho[r];
        const std::size_t wdim = p.feature_dim(r);
        const FeatureEval& fe = fx[r];
        const Matrix& phiy = phi_y[r];

        // Column norms of the x-side jacobian do not depend on y.
        Vector col_norm(d_in, 0.0);
        if (grad || hess) {
            for (std::size_t d = 0; d < d_in; ++d) {
                double acc = 0.0;
                for (std::size_t i = 0; i < wdim; ++i) {
                    acc += fe.jac(i, d) * fe.jac(i, d);
                }
                col_norm[d] = acc;
            }
        }

        delta.resize(wdim);
        for (std::size_t m = 0; m < n_pts; ++m) {
            const double* py = phiy.row(m);
            double sq = 0.0;
            for (std::size_t i = 0; i < wdim; ++i) {
                delta[i] = fe.phi[i] - py[i];
                sq += delta[i] * delta[i];
            }
            const double e = std::exp(-0.5 * gam * sq);
            if (kv) {
                (*kv)[m] += w_r * e;
            }
            if (!grad && !hess) {
                continue;
            }
            for (std::size_t d = 0; d < d_in; ++d) {
                double q = 0.0;
                double mh = 0.0;
                for (std::size_t i = 0; i < wdim; ++i) {
                    q += delta[i] * fe.jac(i, d);
                    mh += delta[i] * fe.hess(i, d);
                }
                if (grad) {
                    (*grad)(m, d) += w_r * (-gam * q * e);
                }
                if (hess) {
                    (*hess)(m, d) += w_r * e * (gam * gam * q * q - gam * (col_norm[d] + mh));
                }
            }
        }
    }
}

KernelBack KernelBack::zeros(const KernelParams& p, std::size_t m_points) {
    KernelBack b;
    for (std::size_t r = 0; r < p.components(); ++r) {
        const std::size_t w = p.feature_dim(r);
        b.s_phi_x.emplace_back(w, 0.0);
        b.s_jac_x.emplace_back(w, p.input_dim);
        b.s_hess_x.emplace_back(w, p.input_dim);
        b.s_phi_y.emplace_back(m_points, w);
    }
    b.rho_bar.assign(p.components(), 0.0);
    b.gamma_bar.assign(p.components(), 0.0);
    return b;
}

void kernel_slabs_backward(const KernelParams& p, const std::vector<FeatureEval>& fx,
                           const std::vector<Matrix>& phi_y, const Vector* s_kv,
                           const Matrix* s_grad, const Matrix* s_hess, KernelBack& back) {
    const std::size_t d_in = p.input_dim;
    const std::size_t n_pts = phi_y.empty() ? 0 : phi_y[0].rows();
    const Vector rho = p.mixture_weights();

    Vector delta, qv, mv, cj, ch;
    for (std::size_t r = 0; r < p.components(); ++r) {
        const double gam = p.gamma(r);
        const double w_r = rho[r];
        const std::size_t wdim = p.feature_dim(r);
        const FeatureEval& fe = fx[r];
        const Matrix& phiy = phi_y[r];

        Vector col_norm(d_in, 0.0);
        for (std::size_t d = 0; d < d_in; ++d) {
            double acc = 0.0;
            for (std::size_t i = 0; i < wdim; ++i) {
                acc += fe.jac(i, d) * fe.jac(i, d);
            }
            col_norm[d] = acc;
        }

        delta.resize(wdim);
        qv.resize(d_in);
        mv.resize(d_in);
        cj.resize(d_in);
        ch.resize(d_in);

        for (std::size_t m = 0; m < n_pts; ++m) {
            const double* py = phiy.row(m);
            double sq = 0.0;
            for (std::size_t i = 0; i < wdim; ++i) {
                delta[i] = fe.phi[i] - py[i];
                sq += delta[i] * delta[i];
            }
            const double e = std::exp(-0.5 * gam * sq);

            for (std::size_t d = 0; d < d_in; ++d) {
                double q = 0.0;
                double mh = 0.0;
                for (std::size_t i = 0; i < wdim; ++i) {
                    q += delta[i] * fe.jac(i, d);
                    mh += delta[i] * fe.hess(i, d);
                }
                qv[d] = q;
                mv[d] = mh;
            }

            const double sv = s_kv ? (*s_kv)[m] : 0.0;
            // Scalar coefficients of the delta / jac-column / hess-column
            // directions in the accumulated sensitivity.
            double c0 = -gam * e * sv;
            double gbar = sv * (-0.5 * sq * e);

            for (std::size_t d = 0; d < d_in; ++d) {
                const double sg = s_grad ? (*s_grad)(m, d) : 0.0;
                const double sh = s_hess ? (*s_hess)(m, d) : 0.0;
                const double q = qv[d];
                const double t = e * (gam * gam * q * q - gam * (col_norm[d] + mv[d]));

                // grad term u_d = -gam q e
                c0 += sg * gam * gam * q * e;
                cj[d] = sg * (-gam * e) + sh * 2.0 * gam * gam * q * e;
                gbar += sg * e * q * (0.5 * gam * sq - 1.0);

                // hess term t_d = e (gam^2 q^2 - gam (n + m))
                c0 += sh * (-gam) * (gam * gam * q * q - gam * (col_norm[d] + mv[d])) * e;
                ch[d] = sh * (-gam * e);
                gbar += sh * (-0.5 * sq * t + e * (2.0 * gam * q * q - col_norm[d] - mv[d]));
            }

            // rho chain: rho_bar picks up the unweighted component outputs.
            double rb = sv * e;
            for (std::size_t d = 0; d < d_in; ++d) {
                const double sg = s_grad ? (*s_grad)(m, d) : 0.0;
                const double sh = s_hess ? (*s_hess)(m, d) : 0.0;
                rb += sg * (-gam * qv[d] * e);
                rb += sh * e * (gam * gam * qv[d] * qv[d] - gam * (col_norm[d] + mv[d]));
            }
            back.rho_bar[r] += rb;
            back.gamma_bar[r] += w_r * gbar;

            // s_delta = c0 * delta + jac * cj + hess * ch, weighted by rho_r.
            // The same cj / ch coefficients also scale delta into the jacobian
            // and hessian column sensitivities.
            double* sy = back.s_phi_y[r].row(m);
            for (std::size_t i = 0; i < wdim; ++i) {
                double sd = c0 * delta[i];
                for (std::size_t d = 0; d < d_in; ++d) {
                    sd += cj[d] * fe.jac(i, d) + ch[d] * fe.hess(i, d);
                }
                sd *= w_r;
                back.s_phi_x[r][i] += sd;
                sy[i] -= sd;
            }
            for (std::size_t d = 0; d < d_in; ++d) {
                const double sh = s_hess ? (*s_hess)(m, d) : 0.0;
                const double jac_self = -2.0 * gam * e * sh;  // d t_d / d jac_d direct part
                for (std::size_t i = 0; i < wdim; ++i) {
                    back.s_jac_x[r](i, d) +=
                        w_r * (cj[d] * delta[i] + jac_self * fe.jac(i, d));
                    back.s_hess_x[r](i, d) += w_r * ch[d] * delta[i];
                }
            }
        }
    }
}

Matrix kernel_gram_from_features(const KernelParams& p, const std::vector<Matrix>& phi) {
    const std::size_t n = phi.empty() ? 0 : phi[0].rows();
    const Vector rho = p.mixture_weights();
    Matrix k(n, n);
    for (std::size_t r = 0; r < p.components(); ++r) {
        const double gam = p.gamma(r);
        const std::size_t wdim = p.feature_dim(r);
        for (std::size_t i = 0; i < n; ++i) {
            k(i, i) += rho[r];
            const double* pi = phi[r].row(i);
            for (std::size_t j = i + 1; j < n; ++j) {
                const double* pj = phi[r].row(j);
                double sq = 0.0;
                for (std::size_t w = 0; w < wdim; ++w) {
                    const double d = pi[w] - pj[w];
                    sq += d * d;
                }
                const double v = rho[r] * std::exp(-0.5 * gam * sq);
                k(i, j) += v;
                k(j, i) += v;
            }
        }
    }
    return k;
}

Matrix kernel_gram(const KernelParams& p, const Matrix& pts) {
    if (pts.cols() != p.input_dim) {
        throw DimensionMismatch("kernel_gram: points have " + std::to_string(pts.cols()) +
                                " dims, kernel expects " + std::to_string(p.input_dim));
    }
    return kernel_gram_from_features(p, kernel_feature_table(p, pts));
}

void kernel_gram_backward(const KernelParams& p, const std::vector<Matrix>& phi,
                          const Matrix& s_gram, KernelBack& back) {
    const std::size_t n = phi.empty() ? 0 : phi[0].rows();
    const Vector rho = p.mixture_weights();
    Vector delta;
    for (std::size_t r = 0; r < p.components(); ++r) {
        const double gam = p.gamma(r);
        const std::size_t wdim = p.feature_dim(r);
        delta.resize(wdim);
        for (std::size_t i = 0; i < n; ++i) {
            back.rho_bar[r] += s_gram(i, i);  // diagonal entries are rho_r exactly
            const double* pi = phi[r].row(i);
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) {
                    continue;
                }
                const double* pj = phi[r].row(j);
                double sq = 0.0;
                for (std::size_t w = 0; w < wdim; ++w) {
                    delta[w] = pi[w] - pj[w];
                    sq += delta[w] * delta[w];
                }
                const double e = std::exp(-0.5 * gam * sq);
                const double sv = s_gram(i, j);
                back.rho_bar[r] += sv * e;
                back.gamma_bar[r] += rho[r] * sv * (-0.5 * sq * e);
                // k(z_i, z_j) depends on phi_i through this entry and its
                // transpose, so the phi pullback carries both seeds.
                const double c0 = rho[r] * (sv + s_gram(j, i)) * (-gam * e);
                double* si = back.s_phi_y[r].row(i);
                for (std::size_t w = 0; w < wdim; ++w) {
                    si[w] += c0 * delta[w];
                }
            }
        }
    }
}

namespace {

void check_pair(const KernelParams& p, const Vector& x, const Vector& y, const char* who) {
    if (x.size() != p.input_dim || y.size() != p.input_dim) {
        throw DimensionMismatch(std::string(who) + ": point dimension mismatch");
    }
}

}  // namespace

double kernel_eval(const KernelParams& p, const Vector& x, const Vector& y) {
    check_pair(p, x, y, "kernel_eval");
    const Vector rho = p.mixture_weights();
    double k = 0.0;
    for (std::size_t r = 0; r < p.components(); ++r) {
        Vector px = feature_value(p.nets[r], p.input_dim, x.data());
        Vector py = feature_value(p.nets[r], p.input_dim, y.data());
        double sq = 0.0;
        for (std::size_t i = 0; i < px.size(); ++i) {
            const double d = px[i] - py[i];
            sq += d * d;
        }
        k += rho[r] * std::exp(-0.5 * p.gamma(r) * sq);
    }
    return k;
}

Vector kernel_grad_x(const KernelParams& p, const Vector& x, const Vector& y) {
    check_pair(p, x, y, "kernel_grad_x");
    auto fx = kernel_features(p, x.data());
    Matrix ymat(1, p.input_dim);
    std::copy(y.begin(), y.end(), ymat.row(0));
    auto phi_y = kernel_feature_table(p, ymat);
    Matrix grad;
    kernel_slabs(p, fx, phi_y, nullptr, &grad, nullptr);
    return Vector(grad.row(0), grad.row(0) + p.input_dim);
}

Vector kernel_hess_diag_x(const KernelParams& p, const Vector& x, const Vector& y) {
    check_pair(p, x, y, "kernel_hess_diag_x");
    auto fx = kernel_features(p, x.data());
    Matrix ymat(1, p.input_dim);
    std::copy(y.begin(), y.end(), ymat.row(0));
    auto phi_y = kernel_feature_table(p, ymat);
    Matrix hess;
    kernel_slabs(p, fx, phi_y, nullptr, nullptr, &hess);
    return Vector(hess.row(0), hess.row(0) + p.input_dim);
}

}  // namespace deepkexp
