#include "deepkexp/whitening.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "deepkexp/eigensym.hpp"
#include "deepkexp/errors.hpp"

namespace deepkexp {

Whitening whitening_identity(std::size_t dim) {
    Whitening w;
    w.kept_columns.resize(dim);
    std::iota(w.kept_columns.begin(), w.kept_columns.end(), 0);
    w.raw_dim = dim;
    w.mean.assign(dim, 0.0);
    w.transform = Matrix(dim, dim);
    w.inverse = Matrix(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) {
        w.transform(i, i) = 1.0;
        w.inverse(i, i) = 1.0;
    }
    w.log_abs_det = 0.0;
    return w;
}

Whitening whitening_fit(const Matrix& rows) {
    const std::size_t n = rows.rows();
    const std::size_t d = rows.cols();
    if (n < 2) {
        throw DatasetTooSmall("whitening_fit: need at least 2 rows");
    }

    Whitening w = whitening_identity(d);
    for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += rows(i, j);
        }
        w.mean[j] = acc / static_cast<double>(n);
    }

    Matrix cov(d, d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* r = rows.row(i);
        for (std::size_t a = 0; a < d; ++a) {
            const double xa = r[a] - w.mean[a];
            for (std::size_t b = a; b < d; ++b) {
                cov(a, b) += xa * (r[b] - w.mean[b]);
            }
        }
    }
    const double scale = 1.0 / static_cast<double>(n - 1);
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = a; b < d; ++b) {
            cov(a, b) *= scale;
            cov(b, a) = cov(a, b);
        }
    }

    SymEigen eig = sym_eigen(cov);

    // Sign convention: the largest-magnitude component of each eigenvector is
    // positive, making the decomposition unique.
    for (std::size_t j = 0; j < d; ++j) {
        std::size_t imax = 0;
        for (std::size_t i = 1; i < d; ++i) {
            if (std::fabs(eig.vectors(i, j)) > std::fabs(eig.vectors(imax, j))) {
                imax = i;
            }
        }
        if (eig.vectors(imax, j) < 0.0) {
            for (std::size_t i = 0; i < d; ++i) {
                eig.vectors(i, j) = -eig.vectors(i, j);
            }
        }
    }

    double max_eig = 0.0;
    for (double v : eig.values) {
        max_eig = std::max(max_eig, v);
    }
    const double floor_eig = std::max(max_eig, 1.0) * 1e-12;

    // Symmetric square root V diag(lam^-1/2) V^T: unique given the covariance
    // and close to the identity when the covariance already is, which the
    // rotation-valued form diag(lam^-1/2) V^T is not under near-degenerate
    // eigenvalues.
    w.log_abs_det = 0.0;
    Vector inv_root(d), root(d);
    for (std::size_t i = 0; i < d; ++i) {
        const double lam = std::max(eig.values[i], floor_eig);
        root[i] = std::sqrt(lam);
        inv_root[i] = 1.0 / root[i];
        w.log_abs_det -= 0.5 * std::log(lam);
    }
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            double t = 0.0;
            double inv = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double vv = eig.vectors(i, k) * eig.vectors(j, k);
                t += vv * inv_root[k];
                inv += vv * root[k];
            }
            w.transform(i, j) = t;
            w.inverse(i, j) = inv;
        }
    }
    return w;
}

Vector whiten(const Whitening& w, const Vector& raw) {
    Vector centered(w.dim());
    if (raw.size() == w.dim()) {
        for (std::size_t i = 0; i < w.dim(); ++i) {
            centered[i] = raw[i] - w.mean[i];
        }
    } else if (raw.size() == w.raw_dim) {
        for (std::size_t i = 0; i < w.dim(); ++i) {
            centered[i] = raw[w.kept_columns[i]] - w.mean[i];
        }
    } else {
        throw WrongDimension("whiten: point has " + std::to_string(raw.size()) +
                             " dims, expected " + std::to_string(w.raw_dim));
    }
    return matvec(w.transform, centered);
}

Vector unwhiten(const Whitening& w, const Vector& internal) {
    if (internal.size() != w.dim()) {
        throw WrongDimension("unwhiten: dimension mismatch");
    }
    Vector x = matvec(w.inverse, internal);
    for (std::size_t i = 0; i < w.dim(); ++i) {
        x[i] += w.mean[i];
    }
    return x;
}

Matrix whiten_rows(const Whitening& w, const Matrix& raw) {
    Matrix out(raw.rows(), w.dim());
    Vector row(raw.cols());
    for (std::size_t i = 0; i < raw.rows(); ++i) {
        row.assign(raw.row(i), raw.row(i) + raw.cols());
        Vector v = whiten(w, row);
        std::copy(v.begin(), v.end(), out.row(i));
    }
    return out;
}

Vector pullback_grad(const Whitening& w, const Vector& grad_internal) {
    return matvec_transposed(w.transform, grad_internal);
}

}  // namespace deepkexp
