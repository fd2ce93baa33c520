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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "biasprobe/error.hpp"
#include "biasprobe/linalg.hpp"
#include "biasprobe/nnls.hpp"
#include "biasprobe/rng.hpp"

namespace biasprobe {

struct NmfOptions {
  std::size_t max_outer_iters = 200;
  double rel_tol = 1e-5;
  std::uint64_t seed = 0;
};

/// A ~= U W^T with U (n x r) and W (p x r) both non-negative.
struct NmfResult {
  Matrix U;
  Matrix W;
  /// 0.5 * ||A - U W^T||_F^2 after each outer iteration; non-increasing.
  std::vector<double> objective_trace;
  std::size_t iterations = 0;
  bool converged = false;

  double objective() const { return objective_trace.empty() ? 0.0 : objective_trace.back(); }
};

inline double nmf_objective(const Matrix& A, const Matrix& U, const Matrix& W) {
  return 0.5 * (A - U * W.transpose()).squaredNorm();
}

namespace detail {

// Solves every row of `factor` against the fixed Gram matrix: row i of the
// result is argmin_{x >= 0} ||target_i - fixed x||, where target_i is row i of
// A (or of A^T), using rhs = target_i^T fixed. The current row warm-starts
// the solver. Rows are processed in index order so the result is
// deterministic.
inline void nnls_rows(const Eigen::MatrixXd& gram, const Matrix& rhs, const Eigen::VectorXd& target_norms,
                      Matrix& factor) {
  const double scale = std::sqrt(std::max(gram.trace(), 0.0));
  for (Eigen::Index i = 0; i < rhs.rows(); ++i) {
    const Vector h = rhs.row(i).transpose();
    const Vector start = factor.row(i).transpose();
    factor.row(i) = GramNnls::solve_with_gram(gram, h, scale, target_norms(i), &start).transpose();
  }
}

// Re-seeds concepts whose coefficient column or basis column collapsed to zero.
// The replacement basis column is the positive part of the worst-reconstructed
// row of A; its coefficients are reset to zero first, so the objective is
// unchanged by the swap and the following exact U-solve can only lower it.
inline void revive_dead_concepts(const Matrix& A, Matrix& U, Matrix& W) {
  std::vector<Eigen::Index> dead;
  for (Eigen::Index k = 0; k < W.cols(); ++k) {
    if (U.col(k).cwiseAbs().maxCoeff() == 0.0 || W.col(k).cwiseAbs().maxCoeff() == 0.0) dead.push_back(k);
  }
  if (dead.empty()) return;
  const Matrix positive_residual = (A - U * W.transpose()).cwiseMax(0.0);
  Eigen::VectorXd row_energy = positive_residual.rowwise().squaredNorm();
  for (auto k : dead) {
    Eigen::Index row = 0;
    const double energy = row_energy.maxCoeff(&row);
    if (!(energy > 0.0)) break;
    U.col(k).setZero();
    W.col(k) = positive_residual.row(row).transpose();
    row_energy(row) = 0.0;
  }
}

}  // namespace detail

/// Alternating-NNLS non-negative matrix factorization.
///
/// W is initialized i.i.d. uniform [0, 1) scaled by mean(A) / sqrt(r). Each
/// outer iteration solves all rows of U exactly (W fixed) and then all rows of
/// W exactly (U fixed), so the objective cannot increase in exact arithmetic.
/// Concepts that die (all-zero coefficient or basis column) are re-seeded from
/// the reconstruction residual without changing the current objective.
/// A sweep whose objective rises through rounding is rolled back and the
/// factorization is reported as converged.
inline NmfResult nmf(const Matrix& A, Eigen::Index rank, const NmfOptions& options = {}) {
  require_finite(A, "nmf input");
  if ((A.array() < 0.0).any()) fail(ErrorKind::NegativeInput, "nmf input has negative entries");
  const Eigen::Index n = A.rows();
  const Eigen::Index p = A.cols();
  if (rank < 1 || rank > std::min(n, p))
    fail(ErrorKind::RankOutOfRange, "rank " + std::to_string(rank) + " outside [1, " +
                                        std::to_string(std::min(n, p)) + "]");

  NmfResult result;
  result.U = Matrix::Zero(n, rank);
  result.W = Matrix(p, rank);
  Rng rng(options.seed);
  const double init_scale = A.mean() / std::sqrt(static_cast<double>(rank));
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index k = 0; k < rank; ++k) result.W(i, k) = rng.uniform() * init_scale;

  const Eigen::VectorXd row_norms = A.rowwise().norm();
  const Eigen::VectorXd col_norms = A.colwise().norm().transpose();

  Matrix U_prev;
  Matrix W_prev;
  for (std::size_t it = 0; it < options.max_outer_iters; ++it) {
    if (it > 0) detail::revive_dead_concepts(A, result.U, result.W);
    U_prev = result.U;
    W_prev = result.W;

    {
      const Eigen::MatrixXd gram = result.W.transpose() * result.W;
      const Matrix rhs = A * result.W;
      detail::nnls_rows(gram, rhs, row_norms, result.U);
    }
    {
      const Eigen::MatrixXd gram = result.U.transpose() * result.U;
      const Matrix rhs = A.transpose() * result.U;
      detail::nnls_rows(gram, rhs, col_norms, result.W);
    }

    const double objective = nmf_objective(A, result.U, result.W);
    if (!std::isfinite(objective)) fail(ErrorKind::NonFinite, "nmf objective became non-finite");
    if (!result.objective_trace.empty() && objective > result.objective_trace.back()) {
      result.U = std::move(U_prev);
      result.W = std::move(W_prev);
      result.converged = true;
      break;
    }
    result.objective_trace.push_back(objective);
    result.iterations = it + 1;

    if (result.objective_trace.size() >= 2) {
      const double prev = result.objective_trace[result.objective_trace.size() - 2];
      if (prev <= 0.0 || (prev - objective) / prev < options.rel_tol) {
        result.converged = true;
        break;
      }
    } else if (objective <= 0.0) {
      result.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace biasprobe
