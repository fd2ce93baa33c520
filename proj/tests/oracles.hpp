// Copyright 2026 The biasprobe Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Reference implementations used only by tests. None of these call into the
// code paths they check.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

namespace oracle {

/// Projected gradient descent for min 0.5 ||B u - a||^2, u >= 0, with the
/// constant step 1 / lambda_max(B^T B).
inline Eigen::VectorXd projected_gradient_nnls(const Eigen::MatrixXd& B, const Eigen::VectorXd& a,
                                               std::size_t iterations) {
  const Eigen::MatrixXd G = B.transpose() * B;
  const Eigen::VectorXd h = B.transpose() * a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
  const double lipschitz = eig.eigenvalues().maxCoeff();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(B.cols());
  if (lipschitz <= 0.0) return u;
  for (std::size_t it = 0; it < iterations; ++it) {
    u = (u - (G * u - h) / lipschitz).cwiseMax(0.0);
  }
  return u;
}

/// Accelerated projected gradient (FISTA with gradient restart) for the same
/// problem. Stops once an iteration moves u by less than `step_tol` or after
/// `max_iterations`.
inline Eigen::VectorXd accelerated_projected_gradient_nnls(const Eigen::MatrixXd& B, const Eigen::VectorXd& a,
                                                           std::size_t max_iterations, double step_tol = 1e-15) {
  const Eigen::MatrixXd G = B.transpose() * B;
  const Eigen::VectorXd h = B.transpose() * a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
  const double lipschitz = eig.eigenvalues().maxCoeff();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(B.cols());
  if (lipschitz <= 0.0) return u;
  Eigen::VectorXd y = u;
  double t = 1.0;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    const Eigen::VectorXd next = (y - (G * y - h) / lipschitz).cwiseMax(0.0);
    const double moved = (next - u).norm();
    if ((y - next).dot(next - u) > 0.0) {
      t = 1.0;
      y = next;
    } else {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = next + ((t - 1.0) / t_next) * (next - u);
      t = t_next;
    }
    u = next;
    if (moved <= step_tol * std::max(1.0, u.norm())) break;
  }
  return u;
}

inline double least_squares_objective(const Eigen::MatrixXd& B, const Eigen::VectorXd& a, const Eigen::VectorXd& u) {
  return 0.5 * (B * u - a).squaredNorm();
}

/// Central finite-difference gradient of a scalar function.
inline Eigen::VectorXd central_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                          const Eigen::VectorXd& x, double step) {
  Eigen::VectorXd grad(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd plus = x;
    Eigen::VectorXd minus = x;
    plus(i) += step;
    minus(i) -= step;
    grad(i) = (f(plus) - f(minus)) / (2.0 * step);
  }
  return grad;
}

/// Cross-entropy of an affine head evaluated directly from its definition,
/// as log(1 + sum_{c != y} exp(l_c - l_y)) in extended precision so that
/// near-zero losses keep their relative accuracy under differencing.
inline double affine_cross_entropy(const Eigen::MatrixXd& weight, const Eigen::VectorXd& bias,
                                   const Eigen::VectorXd& a, int label) {
  std::vector<long double> logits(static_cast<std::size_t>(weight.rows()));
  for (Eigen::Index c = 0; c < weight.rows(); ++c) {
    long double l = bias(c);
    for (Eigen::Index j = 0; j < weight.cols(); ++j) l += static_cast<long double>(weight(c, j)) * a(j);
    logits[static_cast<std::size_t>(c)] = l;
  }
  long double rest = 0.0L;
  for (std::size_t c = 0; c < logits.size(); ++c)
    if (static_cast<int>(c) != label) rest += std::exp(logits[c] - logits[static_cast<std::size_t>(label)]);
  return static_cast<double>(std::log1p(rest));
}

/// Exact one-sided Mann-Whitney p-value P(U >= u_obs) by enumerating every
/// assignment of ranks to the first sample. Only valid without ties.
inline double exact_mann_whitney_greater(const std::vector<double>& greater, const std::vector<double>& lesser) {
  std::vector<double> pooled = greater;
  pooled.insert(pooled.end(), lesser.begin(), lesser.end());
  const std::size_t n = pooled.size();
  const std::size_t k = greater.size();
  auto u_of = [&](const std::vector<std::size_t>& chosen) {
    double u = 0.0;
    std::vector<char> in(n, 0);
    for (auto i : chosen) in[i] = 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (!in[i]) continue;
      for (std::size_t j = 0; j < n; ++j)
        if (!in[j] && pooled[i] > pooled[j]) u += 1.0;
    }
    return u;
  };
  std::vector<std::size_t> observed(k);
  std::iota(observed.begin(), observed.end(), 0);
  const double u_obs = u_of(observed);

  std::size_t total = 0;
  std::size_t extreme = 0;
  std::vector<char> mask(n, 0);
  std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(k), 1);
  do {
    std::vector<std::size_t> chosen;
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i]) chosen.push_back(i);
    ++total;
    if (u_of(chosen) >= u_obs) ++extreme;
  } while (std::prev_permutation(mask.begin(), mask.end()));
  return static_cast<double>(extreme) / static_cast<double>(total);
}

}  // namespace oracle
