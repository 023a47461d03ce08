#include "deepkexp/la.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "deepkexp/errors.hpp"

namespace deepkexp {

void require_finite(const Vector& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericalError(std::string(what) + ": non-finite entry");
        }
    }
}

void require_finite(const Matrix& m, const char* what) {
    const double* p = m.data();
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!std::isfinite(p[i])) {
            throw NumericalError(std::string(what) + ": non-finite entry");
        }
    }
}

Vector matvec(const Matrix& a, const Vector& x) {
    if (a.cols() != x.size()) {
        throw DimensionMismatch("matvec: matrix has " + std::to_string(a.cols()) +
                                " cols, vector has " + std::to_string(x.size()));
    }
    Vector y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* row = a.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            acc += row[j] * x[j];
        }
        y[i] = acc;
    }
    return y;
}

Vector matvec_transposed(const Matrix& a, const Vector& y) {
    if (a.rows() != y.size()) {
        throw DimensionMismatch("matvec_transposed: matrix has " + std::to_string(a.rows()) +
                                " rows, vector has " + std::to_string(y.size()));
    }
    Vector x(a.cols(), 0.0);
    for (std::size_t j = 0; j < a.cols(); ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) {
            acc += a(i, j) * y[i];
        }
        x[j] = acc;
    }
    return x;
}

double dot(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) {
        throw DimensionMismatch("dot: length mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

namespace {

void check_symmetric(const Matrix& a) {
    if (a.rows() != a.cols()) {
        throw NotSymmetric("spd_solve: matrix is not square");
    }
    double scale = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        scale = std::max(scale, std::fabs(a.data()[i]));
    }
    const double tol = 1e-9 * std::max(1.0, scale);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = i + 1; j < a.cols(); ++j) {
            if (std::fabs(a(i, j) - a(j, i)) > tol) {
                throw NotSymmetric("spd_solve: asymmetry at (" + std::to_string(i) + "," +
                                   std::to_string(j) + ")");
            }
        }
    }
}

// In-place lower Cholesky of a copy; false when a pivot is not positive.
bool try_cholesky(Matrix& l) {
    const std::size_t n = l.rows();
    for (std::size_t j = 0; j < n; ++j) {
        double d = l(j, j);
        for (std::size_t k = 0; k < j; ++k) {
            d -= l(j, k) * l(j, k);
        }
        if (!(d > 0.0) || !std::isfinite(d)) {
            return false;
        }
        const double lj = std::sqrt(d);
        l(j, j) = lj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = l(i, j);
            for (std::size_t k = 0; k < j; ++k) {
                s -= l(i, k) * l(j, k);
            }
            l(i, j) = s / lj;
        }
    }
    // Zero the strict upper triangle so the factor is self-contained.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            l(i, j) = 0.0;
        }
    }
    return true;
}

Matrix factor_with_jitter(const Matrix& a) {
    check_symmetric(a);
    const std::size_t n = a.rows();
    double mean_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_diag += a(i, i);
    }
    mean_diag = n ? mean_diag / static_cast<double>(n) : 0.0;
    double diag_scale = std::fabs(mean_diag);
    if (diag_scale == 0.0) {
        diag_scale = 1.0;
    }

    static constexpr double kJitters[] = {0.0, 1e-12, 1e-10, 1e-8};
    for (double jit : kJitters) {
        Matrix l = a;
        if (jit > 0.0) {
            for (std::size_t i = 0; i < n; ++i) {
                l(i, i) += jit * diag_scale;
            }
        }
        if (try_cholesky(l)) {
            return l;
        }
    }
    throw SingularAfterJitter("spd_solve: factorization failed after jitter ladder");
}

Vector solve_from_factor(const Matrix& l, const Vector& rhs) {
    const std::size_t n = l.rows();
    if (rhs.size() != n) {
        throw DimensionMismatch("spd_solve: rhs length " + std::to_string(rhs.size()) +
                                " vs dimension " + std::to_string(n));
    }
    Vector y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = rhs[i];
        for (std::size_t k = 0; k < i; ++k) {
            s -= l(i, k) * y[k];
        }
        y[i] = s / l(i, i);
    }
    Vector x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) {
            s -= l(k, ii) * x[k];
        }
        x[ii] = s / l(ii, ii);
    }
    return x;
}

}  // namespace

Vector spd_solve(const Matrix& a, const Vector& rhs) {
    Matrix l = factor_with_jitter(a);
    return solve_from_factor(l, rhs);
}

SpdFactor::SpdFactor(const Matrix& a) : l_(factor_with_jitter(a)) {}

Vector SpdFactor::solve(const Vector& rhs) const {
    return solve_from_factor(l_, rhs);
}

}  // namespace deepkexp
