#include "deepkexp/featnet.hpp"

#include <cmath>
#include <string>

#include "deepkexp/errors.hpp"

namespace deepkexp {

double softplus(double a) {
    return std::max(a, 0.0) + std::log1p(std::exp(-std::fabs(a)));
}

double softplus_d1(double a) {
    if (a >= 0.0) {
        return 1.0 / (1.0 + std::exp(-a));
    }
    const double e = std::exp(a);
    return e / (1.0 + e);
}

std::size_t NetParams::scalar_count() const {
    std::size_t n = 0;
    for (const auto& w : weights) {
        n += w.size();
    }
    for (const auto& b : biases) {
        n += b.size();
    }
    n += skip_weight.size();
    return n;
}

NetParams net_init(const NetSpec& spec, Rng& rng) {
    if (spec.input_dim == 0 || spec.layers == 0 || spec.width == 0) {
        throw ShapeMismatch("net_init: input_dim, layers and width must be positive");
    }
    NetParams p;
    p.spec = spec;
    for (std::size_t l = 0; l < spec.layers; ++l) {
        const std::size_t fan_in = (l == 0) ? spec.input_dim : spec.width;
        Matrix w(spec.width, fan_in);
        const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < w.size(); ++i) {
            w.data()[i] = rng.normal(0.0, sd);
        }
        p.weights.push_back(std::move(w));
        p.biases.emplace_back(spec.width, 0.0);
    }
    if (spec.skip) {
        p.skip_weight = Matrix(spec.width, spec.input_dim);
        const double sd = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
        for (std::size_t i = 0; i < p.skip_weight.size(); ++i) {
            p.skip_weight.data()[i] = rng.normal(0.0, sd);
        }
    }
    return p;
}

NetParams net_zeros_like(const NetParams& p) {
    NetParams z;
    z.spec = p.spec;
    for (const auto& w : p.weights) {
        z.weights.emplace_back(w.rows(), w.cols());
    }
    for (const auto& b : p.biases) {
        z.biases.emplace_back(b.size(), 0.0);
    }
    if (!p.skip_weight.empty()) {
        z.skip_weight = Matrix(p.skip_weight.rows(), p.skip_weight.cols());
    }
    return z;
}

void net_collect_scalars(NetParams& p, std::vector<double*>& out) {
    for (auto& w : p.weights) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            out.push_back(w.data() + i);
        }
    }
    for (auto& b : p.biases) {
        for (double& x : b) {
            out.push_back(&x);
        }
    }
    for (std::size_t i = 0; i < p.skip_weight.size(); ++i) {
        out.push_back(p.skip_weight.data() + i);
    }
}

NetEval net_eval(const NetParams& p, const double* x) {
    const std::size_t d_in = p.spec.input_dim;
    const std::size_t width = p.spec.width;
    const std::size_t layers = p.spec.layers;

    NetEval ev;
    ev.h.resize(layers + 1);
    ev.d1.resize(layers);
    ev.d2.resize(layers);
    ev.d3.resize(layers);
    ev.pre_jac.resize(layers);
    ev.pre_hess.resize(layers);
    ev.jac_l.resize(layers);
    ev.hess_l.resize(layers);

    ev.h[0].assign(x, x + d_in);

    for (std::size_t l = 0; l < layers; ++l) {
        const Matrix& w = p.weights[l];
        const Vector& prev = ev.h[l];
        const std::size_t fan_in = w.cols();
        const bool top_skip = p.spec.skip && l + 1 == layers;

        Vector a(width);
        for (std::size_t i = 0; i < width; ++i) {
            const double* wr = w.row(i);
            double acc = p.biases[l][i];
            for (std::size_t j = 0; j < fan_in; ++j) {
                acc += wr[j] * prev[j];
            }
            if (top_skip) {
                const double* sr = p.skip_weight.row(i);
                for (std::size_t j = 0; j < d_in; ++j) {
                    acc += sr[j] * x[j];
                }
            }
            a[i] = acc;
        }

        Vector& d1 = ev.d1[l];
        Vector& d2 = ev.d2[l];
        Vector& d3 = ev.d3[l];
        d1.resize(width);
        d2.resize(width);
        d3.resize(width);
        Vector h(width);
        for (std::size_t i = 0; i < width; ++i) {
            h[i] = softplus(a[i]);
            d1[i] = softplus_d1(a[i]);
            d2[i] = softplus_d2(d1[i]);
            d3[i] = softplus_d3(d1[i]);
        }
        ev.h[l + 1] = std::move(h);

        // A^l = W^l J^{l-1} (+ skip at top); J^0 is the identity.
        Matrix pa(width, d_in);
        Matrix pb(width, d_in);
        if (l == 0) {
            for (std::size_t i = 0; i < width; ++i) {
                for (std::size_t d = 0; d < d_in; ++d) {
                    pa(i, d) = w(i, d);
                }
            }
        } else {
            const Matrix& jprev = ev.jac_l[l - 1];
            const Matrix& hprev = ev.hess_l[l - 1];
            for (std::size_t i = 0; i < width; ++i) {
                const double* wr = w.row(i);
                for (std::size_t d = 0; d < d_in; ++d) {
                    double accA = 0.0;
                    double accB = 0.0;
                    for (std::size_t j = 0; j < fan_in; ++j) {
                        accA += wr[j] * jprev(j, d);
                        accB += wr[j] * hprev(j, d);
                    }
                    pa(i, d) = accA;
                    pb(i, d) = accB;
                }
            }
        }
        if (top_skip) {
            for (std::size_t i = 0; i < width; ++i) {
                for (std::size_t d = 0; d < d_in; ++d) {
                    pa(i, d) += p.skip_weight(i, d);
                }
            }
        }

        Matrix j(width, d_in);
        Matrix hh(width, d_in);
        for (std::size_t i = 0; i < width; ++i) {
            for (std::size_t d = 0; d < d_in; ++d) {
                j(i, d) = d1[i] * pa(i, d);
                hh(i, d) = d2[i] * pa(i, d) * pa(i, d) + d1[i] * pb(i, d);
            }
        }
        ev.pre_jac[l] = std::move(pa);
        ev.pre_hess[l] = std::move(pb);
        ev.jac_l[l] = std::move(j);
        ev.hess_l[l] = std::move(hh);
    }

    ev.phi = ev.h[layers];
    ev.jac = ev.jac_l[layers - 1];
    ev.hess = ev.hess_l[layers - 1];
    return ev;
}

Vector net_forward(const NetParams& p, const Vector& x) {
    if (x.size() != p.spec.input_dim) {
        throw DimensionMismatch("net_forward: input has " + std::to_string(x.size()) +
                                " dims, network expects " + std::to_string(p.spec.input_dim));
    }
    return net_eval(p, x.data()).phi;
}

Matrix net_input_jacobian(const NetParams& p, const Vector& x) {
    if (x.size() != p.spec.input_dim) {
        throw DimensionMismatch("net_input_jacobian: dimension mismatch");
    }
    return net_eval(p, x.data()).jac;
}

Matrix net_input_hessian_diag(const NetParams& p, const Vector& x) {
    if (x.size() != p.spec.input_dim) {
        throw DimensionMismatch("net_input_hessian_diag: dimension mismatch");
    }
    return net_eval(p, x.data()).hess;
}

void net_param_gradients(const NetParams& p, const NetEval& ev,
                         const Vector* s_phi, const Matrix* s_jac, const Matrix* s_hess,
                         NetParams& grads) {
    const std::size_t d_in = p.spec.input_dim;
    const std::size_t width = p.spec.width;
    const std::size_t layers = p.spec.layers;

    Vector hbar = s_phi ? *s_phi : Vector(width, 0.0);
    Matrix jbar = s_jac ? *s_jac : Matrix(width, d_in);
    Matrix bbar_next = s_hess ? *s_hess : Matrix(width, d_in);  // H-bar of current layer

    for (std::size_t l = layers; l-- > 0;) {
        const Matrix& w = p.weights[l];
        const std::size_t fan_in = w.cols();
        const bool top_skip = p.spec.skip && l + 1 == layers;
        const Vector& d1 = ev.d1[l];
        const Vector& d2 = ev.d2[l];
        const Vector& d3 = ev.d3[l];
        const Matrix& pa = ev.pre_jac[l];
        const Matrix& pb = ev.pre_hess[l];
        const Matrix& hbar_mat = bbar_next;  // sensitivities on H^l

        // Pull sensitivities back through the activation:
        //   h = sp(a); J = d1 .* A; H = d2 .* A.^2 + d1 .* B
        Vector abar(width, 0.0);
        Matrix Abar(width, d_in);
        Matrix Bbar(width, d_in);
        for (std::size_t i = 0; i < width; ++i) {
            double acc = hbar[i] * d1[i];
            for (std::size_t d = 0; d < d_in; ++d) {
                const double jb = jbar(i, d);
                const double hb = hbar_mat(i, d);
                acc += jb * d2[i] * pa(i, d);
                acc += hb * (d3[i] * pa(i, d) * pa(i, d) + d2[i] * pb(i, d));
                Abar(i, d) = jb * d1[i] + hb * 2.0 * d2[i] * pa(i, d);
                Bbar(i, d) = hb * d1[i];
            }
            abar[i] = acc;
        }

        // Parameter gradients of this layer.
        const Vector& hprev = ev.h[l];
        Matrix& wg = grads.weights[l];
        for (std::size_t i = 0; i < width; ++i) {
            for (std::size_t j = 0; j < fan_in; ++j) {
                double acc = abar[i] * hprev[j];
                if (l > 0) {
                    const Matrix& jprev = ev.jac_l[l - 1];
                    const Matrix& hp = ev.hess_l[l - 1];
                    for (std::size_t d = 0; d < d_in; ++d) {
                        acc += Abar(i, d) * jprev(j, d) + Bbar(i, d) * hp(j, d);
                    }
                } else {
                    // J^0 = I, H^0 = 0: only the j-th column of A picks up W.
                    acc += Abar(i, j);
                }
                wg(i, j) += acc;
            }
            grads.biases[l][i] += abar[i];
        }
        if (top_skip) {
            const Vector& x0 = ev.h[0];
            for (std::size_t i = 0; i < width; ++i) {
                for (std::size_t d = 0; d < d_in; ++d) {
                    grads.skip_weight(i, d) += abar[i] * x0[d] + Abar(i, d);
                }
            }
        }

        if (l == 0) {
            break;
        }

        // Push sensitivities to the previous layer's outputs.
        Vector hbar_prev(fan_in, 0.0);
        Matrix jbar_prev(fan_in, d_in);
        Matrix bbar_prev(fan_in, d_in);
        for (std::size_t j = 0; j < fan_in; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < width; ++i) {
                acc += w(i, j) * abar[i];
            }
            hbar_prev[j] = acc;
            for (std::size_t d = 0; d < d_in; ++d) {
                double accJ = 0.0;
                double accB = 0.0;
                for (std::size_t i = 0; i < width; ++i) {
                    accJ += w(i, j) * Abar(i, d);
                    accB += w(i, j) * Bbar(i, d);
                }
                jbar_prev(j, d) = accJ;
                bbar_prev(j, d) = accB;
            }
        }
        hbar = std::move(hbar_prev);
        jbar = std::move(jbar_prev);
        bbar_next = std::move(bbar_prev);
    }
}

}  // namespace deepkexp
