#include "funmatch/linalg.hpp"

#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "linalg_internal.hpp"

namespace funmatch {

namespace linalg {

Eigen::MatrixXd inverse_pth_root(const Eigen::MatrixXd& a, int p, double eps) {
  if (p != 2 && p != 4 && p != 6 && p != 8) {
    throw ConfigError("inverse_pth_root: p must be 2, 4, 6 or 8, got " + std::to_string(p));
  }
  if (a.rows() != a.cols()) throw ShapeError("inverse_pth_root: matrix must be square");
  const Eigen::Index n = a.rows();
  if (n == 0) return a;

  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const double asymmetry = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asymmetry > 1e-8 * scale) {
    throw NumericError("inverse_pth_root: matrix is not symmetric (max |A - A^T| = " + std::to_string(asymmetry) + ")");
  }
  const double exponent = -1.0 / static_cast<double>(p);

  const bool diagonal = (a.array() != 0.0).count() == (a.diagonal().array() != 0.0).count();
  if (diagonal) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double lambda = a(i, i);
      if (lambda < -eps) throw NumericError("inverse_pth_root: negative eigenvalue " + std::to_string(lambda));
      const double damped = lambda + eps;
      if (!(damped > 0.0)) throw NumericError("inverse_pth_root: singular matrix (eigenvalue + eps <= 0)");
      out(i, i) = damped == 1.0 ? 1.0 : std::pow(damped, exponent);
    }
    return out;
  }

  const Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) throw NumericError("inverse_pth_root: eigendecomposition failed");
  Eigen::VectorXd values = solver.eigenvalues();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (values(i) < -eps) throw NumericError("inverse_pth_root: negative eigenvalue " + std::to_string(values(i)));
    const double damped = values(i) + eps;
    if (!(damped > 0.0)) throw NumericError("inverse_pth_root: singular matrix (eigenvalue + eps <= 0)");
    values(i) = std::pow(damped, exponent);
  }
  const Eigen::MatrixXd& q = solver.eigenvectors();
  return q * values.asDiagonal() * q.transpose();
}

}  // namespace linalg

Tensor<double> inverse_pth_root(const Tensor<double>& a, int p, double eps) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw ShapeError("inverse_pth_root: expected a square matrix, got " + to_string(a.shape()));
  }
  const auto n = static_cast<Eigen::Index>(a.dim(0));
  const Eigen::MatrixXd m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(a.data(), n, n);
  const Eigen::MatrixXd x = linalg::inverse_pth_root(m, p, eps);
  Tensor<double> out(a.shape());
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(out.data(), n, n) = x;
  return out;
}

}  // namespace funmatch
