#pragma once

#include "deepkexp/la.hpp"

namespace deepkexp {

// Full eigendecomposition of a real symmetric matrix: Householder
// tridiagonalization followed by implicitly shifted QL sweeps.
// Eigenvalues come back ascending; eigenvectors(:, j) pairs with values[j].
// Deterministic: no pivoting choices depend on anything but the input.
// Internal utility, not part of the installed linear-algebra surface.
struct SymEigen {
    Vector values;
    Matrix vectors;
};

SymEigen sym_eigen(const Matrix& a);

}  // namespace deepkexp
