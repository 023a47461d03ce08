#include "deepkexp/eigensym.hpp"

#include <cmath>
#include <cstddef>
#include <utility>

#include "deepkexp/errors.hpp"

namespace deepkexp {

namespace {

// Householder reduction to tridiagonal form, accumulating the orthogonal
// transform in v. Classic tred2 ordering, kept serial.
void tridiagonalize(Matrix& v, Vector& d, Vector& e) {
    const std::size_t n = v.rows();
    for (std::size_t j = 0; j < n; ++j) {
        d[j] = v(n - 1, j);
    }

    for (std::size_t i = n - 1; i > 0; --i) {
        double scale = 0.0;
        double h = 0.0;
        for (std::size_t k = 0; k < i; ++k) {
            scale += std::fabs(d[k]);
        }
        if (scale == 0.0) {
            e[i] = d[i - 1];
            for (std::size_t j = 0; j < i; ++j) {
                d[j] = v(i - 1, j);
                v(i, j) = 0.0;
                v(j, i) = 0.0;
            }
        } else {
            for (std::size_t k = 0; k < i; ++k) {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            double f = d[i - 1];
            double g = std::sqrt(h);
            if (f > 0.0) {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for (std::size_t j = 0; j < i; ++j) {
                e[j] = 0.0;
            }

            for (std::size_t j = 0; j < i; ++j) {
                f = d[j];
                v(j, i) = f;
                g = e[j] + v(j, j) * f;
                for (std::size_t k = j + 1; k < i; ++k) {
                    g += v(k, j) * d[k];
                    e[k] += v(k, j) * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for (std::size_t j = 0; j < i; ++j) {
                e[j] /= h;
                f += e[j] * d[j];
            }
            const double hh = f / (h + h);
            for (std::size_t j = 0; j < i; ++j) {
                e[j] -= hh * d[j];
            }
            for (std::size_t j = 0; j < i; ++j) {
                f = d[j];
                g = e[j];
                for (std::size_t k = j; k < i; ++k) {
                    v(k, j) -= f * e[k] + g * d[k];
                }
                d[j] = v(i - 1, j);
                v(i, j) = 0.0;
            }
        }
        d[i] = h;
    }

    for (std::size_t i = 0; i + 1 < n; ++i) {
        v(n - 1, i) = v(i, i);
        v(i, i) = 1.0;
        const double h = d[i + 1];
        if (h != 0.0) {
            for (std::size_t k = 0; k <= i; ++k) {
                d[k] = v(k, i + 1) / h;
            }
            for (std::size_t j = 0; j <= i; ++j) {
                double g = 0.0;
                for (std::size_t k = 0; k <= i; ++k) {
                    g += v(k, i + 1) * v(k, j);
                }
                for (std::size_t k = 0; k <= i; ++k) {
                    v(k, j) -= g * d[k];
                }
            }
        }
        for (std::size_t k = 0; k <= i; ++k) {
            v(k, i + 1) = 0.0;
        }
    }
    for (std::size_t j = 0; j < n; ++j) {
        d[j] = v(n - 1, j);
        v(n - 1, j) = 0.0;
    }
    v(n - 1, n - 1) = 1.0;
    e[0] = 0.0;
}

// Implicit-shift QL sweeps on the tridiagonal, rotating v along.
void ql_implicit(Matrix& v, Vector& d, Vector& e) {
    const std::size_t n = v.rows();
    for (std::size_t i = 1; i < n; ++i) {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    double f = 0.0;
    double tst1 = 0.0;
    const double eps = std::ldexp(1.0, -52);
    for (std::size_t l = 0; l < n; ++l) {
        tst1 = std::max(tst1, std::fabs(d[l]) + std::fabs(e[l]));
        std::size_t m = l;
        while (m < n && std::fabs(e[m]) > eps * tst1) {
            ++m;
        }
        if (m > l) {
            int iter = 0;
            do {
                if (++iter > 64) {
                    throw NumericalError("sym_eigen: QL sweep did not converge");
                }
                double g = d[l];
                double p = (d[l + 1] - g) / (2.0 * e[l]);
                double r = std::hypot(p, 1.0);
                if (p < 0.0) {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                const double dl1 = d[l + 1];
                double h = g - d[l];
                for (std::size_t i = l + 2; i < n; ++i) {
                    d[i] -= h;
                }
                f += h;

                p = d[m];
                double c = 1.0;
                double c2 = c;
                double c3 = c;
                const double el1 = e[l + 1];
                double s = 0.0;
                double s2 = 0.0;
                for (std::size_t ii = m; ii-- > l;) {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[ii];
                    h = c * p;
                    r = std::hypot(p, e[ii]);
                    e[ii + 1] = s * r;
                    s = e[ii] / r;
                    c = p / r;
                    p = c * d[ii] - s * g;
                    d[ii + 1] = h + s * (c * g + s * d[ii]);
                    for (std::size_t k = 0; k < n; ++k) {
                        h = v(k, ii + 1);
                        v(k, ii + 1) = s * v(k, ii) + c * h;
                        v(k, ii) = c * v(k, ii) - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
            } while (std::fabs(e[l]) > eps * tst1);
        }
        d[l] += f;
        e[l] = 0.0;
    }
}

void sort_ascending(Matrix& v, Vector& d) {
    const std::size_t n = d.size();
    for (std::size_t i = 0; i + 1 < n; ++i) {
        std::size_t k = i;
        for (std::size_t j = i + 1; j < n; ++j) {
            if (d[j] < d[k]) {
                k = j;
            }
        }
        if (k != i) {
            std::swap(d[k], d[i]);
            for (std::size_t r = 0; r < n; ++r) {
                std::swap(v(r, i), v(r, k));
            }
        }
    }
}

}  // namespace

SymEigen sym_eigen(const Matrix& a) {
    if (a.rows() != a.cols()) {
        throw ShapeMismatch("sym_eigen: matrix is not square");
    }
    const std::size_t n = a.rows();
    SymEigen out;
    out.vectors = a;
    out.values.assign(n, 0.0);
    if (n == 0) {
        return out;
    }
    if (n == 1) {
        out.values[0] = a(0, 0);
        out.vectors(0, 0) = 1.0;
        return out;
    }
    Vector e(n, 0.0);
    tridiagonalize(out.vectors, out.values, e);
    ql_implicit(out.vectors, out.values, e);
    sort_ascending(out.vectors, out.values);
    return out;
}

}  // namespace deepkexp
