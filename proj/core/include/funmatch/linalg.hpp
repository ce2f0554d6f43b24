#pragma once

#include "funmatch/tensor.hpp"

namespace funmatch {

/// (A + eps I)^(-1/p) for symmetric positive semidefinite A via a symmetric
/// eigendecomposition. p must be one of 2, 4, 6, 8. Diagonal inputs take an
/// exact elementwise path.
///
/// Throws NumericError when A is asymmetric beyond 1e-8 (relative to its
/// largest entry, floored at 1) or has an eigenvalue below -eps, or when a
/// damped eigenvalue is not positive.
Tensor<double> inverse_pth_root(const Tensor<double>& a, int p, double eps);

}  // namespace funmatch
