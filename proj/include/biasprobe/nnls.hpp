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

// Lawson-Hanson active-set solver for min ||B u - a||_2 subject to u >= 0.
//
// Two routes share the same active-set driver:
//   * nnls(basis, target) solves each passive-set subproblem by column-pivoted
//     QR on the passive columns of B (best accuracy, one-off solves);
//   * GramNnls works from the normal equations G = B^T B, h = B^T a and solves
//     subproblems by LDLT on G restricted to the passive set. It is the route
//     for repeated solves against a fixed basis (NMF sweeps, projections).
// Coordinates outside the passive set are exact zeros.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "biasprobe/error.hpp"
#include "biasprobe/linalg.hpp"

namespace biasprobe {

namespace detail {

/// Shared Lawson-Hanson driver. `Policy` supplies
///   Vector gradient(const Vector& x)   -> B^T (a - B x)
///   Vector solve(const std::vector<Eigen::Index>& passive) -> LS solution on
///          the passive columns (length = passive.size())
///   bool usable(Eigen::Index j)        -> false for all-zero columns
template <typename Policy>
Vector lawson_hanson(const Policy& policy, Eigen::Index r, double tolerance, const Vector* start = nullptr) {
  Vector x = Vector::Zero(r);
  std::vector<char> passive(static_cast<std::size_t>(r), 0);
  std::vector<char> blocked(static_cast<std::size_t>(r), 0);
  const std::size_t max_outer = 3 * static_cast<std::size_t>(r) + 10;

  auto passive_indices = [&] {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < r; ++j)
      if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
    return idx;
  };

  // Moves x to the least-squares solution on the passive set, backtracking
  // along the segment to keep x >= 0. Returns false when the entering
  // coordinate (if any) had to be blocked instead.
  auto inner = [&](Eigen::Index entering) {
    bool first_pass = true;
    for (Eigen::Index step = 0; step <= r; ++step) {
      const auto idx = passive_indices();
      if (idx.empty()) return true;
      const Vector sub = policy.solve(idx);
      Vector z = Vector::Zero(r);
      for (std::size_t i = 0; i < idx.size(); ++i) z(idx[i]) = sub(static_cast<Eigen::Index>(i));

      bool feasible = true;
      for (auto j : idx) feasible = feasible && z(j) > 0.0;
      if (feasible) {
        x = z;
        return true;
      }
      if (first_pass && entering >= 0 && !(z(entering) > 0.0)) {
        // Rounding made the entering coordinate non-positive; skip it until
        // the iterate changes, otherwise the driver cycles.
        passive[static_cast<std::size_t>(entering)] = 0;
        blocked[static_cast<std::size_t>(entering)] = 1;
        return false;
      }
      first_pass = false;

      double alpha = std::numeric_limits<double>::infinity();
      Eigen::Index blocking = -1;
      for (auto j : idx) {
        if (z(j) <= 0.0) {
          const double denom = x(j) - z(j);
          const double t = denom > 0.0 ? x(j) / denom : 0.0;
          if (t < alpha) {
            alpha = t;
            blocking = j;
          }
        }
      }
      x += alpha * (z - x);
      x(blocking) = 0.0;
      for (auto j : idx) {
        if (x(j) <= 0.0) {
          passive[static_cast<std::size_t>(j)] = 0;
          x(j) = 0.0;
        }
      }
    }
    return true;
  };

  auto clear_inactive = [&] {
    for (Eigen::Index j = 0; j < r; ++j)
      if (!passive[static_cast<std::size_t>(j)]) x(j) = 0.0;
  };

  if (start) {
    // Warm start from a feasible point: its support becomes the passive set.
    for (Eigen::Index j = 0; j < r; ++j) {
      const bool on = (*start)(j) > 0.0 && policy.usable(j);
      passive[static_cast<std::size_t>(j)] = on;
      x(j) = on ? (*start)(j) : 0.0;
    }
    inner(-1);
    clear_inactive();
  }

  Vector w = policy.gradient(x);
  for (std::size_t outer = 0; outer < max_outer; ++outer) {
    Eigen::Index entering = -1;
    double best = tolerance;
    for (Eigen::Index j = 0; j < r; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      if (passive[uj] || blocked[uj] || !policy.usable(j)) continue;
      if (w(j) > best) {
        best = w(j);
        entering = j;
      }
    }
    if (entering < 0) break;
    passive[static_cast<std::size_t>(entering)] = 1;
    if (inner(entering)) std::fill(blocked.begin(), blocked.end(), 0);
    clear_inactive();
    w = policy.gradient(x);
  }
  return x;
}

inline double nnls_tolerance(double basis_scale, double target_norm) {
  return 64.0 * std::numeric_limits<double>::epsilon() * std::max(basis_scale, 1.0) *
         std::max(target_norm, 1.0);
}

}  // namespace detail

/// Solves min ||basis * u - target||_2 over u >= 0 with the QR route.
/// All-zero basis columns receive a zero coefficient.
inline Vector nnls(const Matrix& basis, const Vector& target) {
  if (basis.rows() < 1 || basis.cols() < 1) fail(ErrorKind::DimensionMismatch, "nnls: empty basis");
  if (basis.rows() != target.size())
    fail(ErrorKind::DimensionMismatch, "nnls: basis has " + std::to_string(basis.rows()) +
                                           " rows but target has length " + std::to_string(target.size()));
  require_finite(basis, "nnls basis");
  require_finite(target, "nnls target");

  struct QrPolicy {
    const Matrix& basis;
    const Vector& target;
    Eigen::VectorXd column_norms;

    bool usable(Eigen::Index j) const { return column_norms(j) > 0.0; }
    Vector gradient(const Vector& x) const { return basis.transpose() * (target - basis * x); }
    Vector solve(const std::vector<Eigen::Index>& idx) const {
      Eigen::MatrixXd sub(basis.rows(), static_cast<Eigen::Index>(idx.size()));
      for (std::size_t i = 0; i < idx.size(); ++i) sub.col(static_cast<Eigen::Index>(i)) = basis.col(idx[i]);
      return sub.colPivHouseholderQr().solve(target);
    }
  };

  const QrPolicy policy{basis, target, basis.colwise().norm().transpose()};
  const double tol = detail::nnls_tolerance(basis.norm(), target.norm());
  return detail::lawson_hanson(policy, basis.cols(), tol);
}

/// Normal-equation route for repeated solves against one basis.
class GramNnls {
 public:
  explicit GramNnls(const Matrix& basis) : basis_(basis), gram_(basis.transpose() * basis) {
    if (basis.rows() < 1 || basis.cols() < 1) fail(ErrorKind::DimensionMismatch, "GramNnls: empty basis");
    require_finite(basis, "nnls basis");
    scale_ = std::sqrt(std::max(gram_.trace(), 0.0));
  }

  Eigen::Index rank() const { return basis_.cols(); }
  Eigen::Index width() const { return basis_.rows(); }
  const Matrix& basis() const { return basis_; }

  Vector solve(const Vector& target) const {
    if (target.size() != basis_.rows())
      fail(ErrorKind::DimensionMismatch, "nnls: target length " + std::to_string(target.size()) +
                                             " does not match basis width " + std::to_string(basis_.rows()));
    require_finite(target, "nnls target");
    const Vector rhs = basis_.transpose() * target;
    return solve_normal(rhs, target.norm());
  }

  /// Solves from a precomputed right-hand side h = B^T a.
  Vector solve_normal(const Vector& rhs, double target_norm) const {
    return solve_with_gram(gram_, rhs, scale_, target_norm);
  }

  /// Normal-equation solve with an explicit Gram matrix; used by NMF where the
  /// basis is never materialized per column. `start`, when given, must be
  /// non-negative; its support seeds the passive set.
  static Vector solve_with_gram(const Eigen::MatrixXd& gram, const Vector& rhs, double basis_scale,
                                double target_norm, const Vector* start = nullptr) {
    struct Policy {
      const Eigen::MatrixXd& gram;
      const Vector& rhs;
      bool usable(Eigen::Index j) const { return gram(j, j) > 0.0; }
      Vector gradient(const Vector& x) const { return rhs - gram * x; }
      Vector solve(const std::vector<Eigen::Index>& idx) const {
        const auto k = static_cast<Eigen::Index>(idx.size());
        Eigen::MatrixXd sub(k, k);
        Vector h(k);
        for (Eigen::Index a = 0; a < k; ++a) {
          h(a) = rhs(idx[static_cast<std::size_t>(a)]);
          for (Eigen::Index b = 0; b < k; ++b)
            sub(a, b) = gram(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
        }
        Eigen::LDLT<Eigen::MatrixXd> ldlt(sub);
        if (ldlt.info() == Eigen::Success && ldlt.isPositive()) return ldlt.solve(h);
        return sub.completeOrthogonalDecomposition().solve(h);
      }
    };
    const Policy policy{gram, rhs};
    return detail::lawson_hanson(policy, gram.rows(), detail::nnls_tolerance(basis_scale, target_norm), start);
  }

 private:
  Matrix basis_;
  Eigen::MatrixXd gram_;
  double scale_ = 0.0;
};

}  // namespace biasprobe
