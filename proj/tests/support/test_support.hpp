#pragma once

// Shared oracles for the unit and acceptance tests. Everything here is
// written with plain loops so it does not share code paths with the library.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "funmatch/autodiff.hpp"
#include "funmatch/tensor.hpp"

namespace funmatch::testing {

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

struct GradCheck {
  /// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over all inputs.
  double max_rel_error = 0.0;
  std::string worst;
};

/// Builds a scalar loss from leaf variables on a fresh f64 tape.
using LossBuilder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

/// Central finite differences (step h) against Tape::backward for every element of every input.
/// The floor keeps the ratio meaningful for gradients that are essentially zero.
inline GradCheck grad_check(const std::vector<Tensor<double>>& inputs, const LossBuilder& build, double h = 1e-5,
                            double floor = 1e-4) {
  const auto evaluate = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> tape(false);
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.variable(x));
    return tape.value(build(tape, vars)).item();
  };

  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.variable(x));
  const Var loss = build(tape, vars);
  const Gradients<double> grads = tape.backward(loss);

  GradCheck result;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].size(); ++i) {
      const double original = probe[t][i];
      probe[t][i] = original + h;
      const double up = evaluate(probe);
      probe[t][i] = original - h;
      const double down = evaluate(probe);
      probe[t][i] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads[vars[t]][i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = "input " + std::to_string(t) + " element " + std::to_string(i) + ": analytic " +
                       std::to_string(analytic) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return result;
}

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const Tensor<double>& t) {
  const std::size_t n = t.dim(0), m = t.dim(1);
  Matrix out(n, std::vector<double>(m));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i][j] = t[i * m + j];
  }
  return out;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.size(), k = b.size(), m = b.empty() ? 0 : b[0].size();
  Matrix out(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double v = a[i][p];
      for (std::size_t j = 0; j < m; ++j) out[i][j] += v * b[p][j];
    }
  }
  return out;
}

/// Frobenius norm of X^p (A + eps I) - I.
inline double inverse_root_residual(const Tensor<double>& x, const Tensor<double>& a, int p, double eps) {
  const Matrix xm = to_matrix(x);
  Matrix damped = to_matrix(a);
  for (std::size_t i = 0; i < damped.size(); ++i) damped[i][i] += eps;
  Matrix power = xm;
  for (int i = 1; i < p; ++i) power = matmul(power, xm);
  const Matrix product = matmul(power, damped);
  double sum = 0.0;
  for (std::size_t i = 0; i < product.size(); ++i) {
    for (std::size_t j = 0; j < product.size(); ++j) {
      const double d = product[i][j] - (i == j ? 1.0 : 0.0);
      sum += d * d;
    }
  }
  return std::sqrt(sum);
}

/// Random symmetric positive definite matrix Q diag(lambda) Q^T with eigenvalues
/// log-spaced between 1 and `condition`. Q comes from Gram-Schmidt on a random matrix.
inline Tensor<double> random_spd(std::size_t n, double condition, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix q(n, std::vector<double>(n));
  for (auto& row : q) {
    for (double& v : row) v = gauss(rng);
  }
  // Orthonormalise the rows (modified Gram-Schmidt, two passes for stability).
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += q[i][k] * q[j][k];
        for (std::size_t k = 0; k < n; ++k) q[i][k] -= dot * q[j][k];
      }
      double norm = 0.0;
      for (double v : q[i]) norm += v * v;
      norm = std::sqrt(norm);
      for (double& v : q[i]) v /= norm;
    }
  }
  std::vector<double> lambda(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    lambda[i] = std::pow(condition, t);
  }
  Tensor<double> out({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += q[k][i] * lambda[k] * q[k][j];
      out[i * n + j] = s;
      out[j * n + i] = s;
    }
  }
  return out;
}

}  // namespace funmatch::testing
