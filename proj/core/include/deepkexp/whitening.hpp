#pragma once

#include <cstddef>
#include <vector>

#include "deepkexp/la.hpp"

namespace deepkexp {

// Affine map from raw data coordinates to the model's internal coordinates:
// w = transform * (x[kept_columns] - mean). The transform is the symmetric
// inverse square root of the sample covariance, which is unique for a given
// covariance and reduces to the identity when the data is already white.
struct Whitening {
    std::vector<std::size_t> kept_columns;  // raw column indices that survived
    std::size_t raw_dim = 0;
    Vector mean;        // per kept column
    Matrix transform;   // D x D
    Matrix inverse;     // D x D, exact stored inverse of transform
    double log_abs_det = 0.0;

    std::size_t dim() const { return mean.size(); }
};

Whitening whitening_identity(std::size_t dim);

// Whitening from the eigendecomposition of the sample covariance of the given
// rows (already column-filtered). Eigenvalues are floored at 1e-12 times the
// largest to keep near-degenerate directions finite.
Whitening whitening_fit(const Matrix& rows);

Vector whiten(const Whitening& w, const Vector& raw);
Vector unwhiten(const Whitening& w, const Vector& internal);
Matrix whiten_rows(const Whitening& w, const Matrix& raw);

// Pulls a gradient in internal coordinates back to raw coordinates:
// grad_raw = transform^T * grad_internal (chain rule through the affine map).
Vector pullback_grad(const Whitening& w, const Vector& grad_internal);

}  // namespace deepkexp
