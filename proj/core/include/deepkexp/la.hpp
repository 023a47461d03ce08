#pragma once

#include <cstddef>
#include <vector>

namespace deepkexp {

// Dense row-major matrix. Reductions over its entries run in a fixed serial
// order so repeated runs produce bit-identical results.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), a_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return a_.size(); }
    bool empty() const { return a_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return a_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a_[i * cols_ + j]; }

    double* data() { return a_.data(); }
    const double* data() const { return a_.data(); }
    double* row(std::size_t i) { return a_.data() + i * cols_; }
    const double* row(std::size_t i) const { return a_.data() + i * cols_; }

    void fill(double v) { a_.assign(a_.size(), v); }

    bool operator==(const Matrix&) const = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> a_;
};

using Vector = std::vector<double>;

// Throws if v contains NaN or infinities; used at data-ingestion boundaries.
void require_finite(const Vector& v, const char* what);
void require_finite(const Matrix& m, const char* what);

// y = a * x with the naive row-by-row left-to-right summation order.
Vector matvec(const Matrix& a, const Vector& x);

// x = a^T * y, same fixed ordering guarantees.
Vector matvec_transposed(const Matrix& a, const Vector& y);

double dot(const Vector& a, const Vector& b);

// Solves a * x = rhs for symmetric positive (semi)definite a.
// Symmetry is checked up front (tolerance 1e-9, throws NotSymmetric).
// Factorization failures retry with diagonal jitter of 1e-12, 1e-10, 1e-8
// times the mean diagonal before throwing SingularAfterJitter.
Vector spd_solve(const Matrix& a, const Vector& rhs);

// Factor once, solve many right-hand sides against the same matrix.
class SpdFactor {
  public:
    explicit SpdFactor(const Matrix& a);
    Vector solve(const Vector& rhs) const;
    std::size_t dim() const { return l_.rows(); }

  private:
    Matrix l_;
};

}  // namespace deepkexp
