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

// Random inputs and contract checkers shared by the unit and acceptance
// suites.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "biasprobe/error.hpp"
#include "biasprobe/linalg.hpp"
#include "biasprobe/rng.hpp"

namespace biasprobe::testing {

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

inline Vector random_vector(Rng& rng, Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

inline Matrix random_nonnegative(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform();
  return m;
}

// Returns the worst violation of the KKT conditions relative to the allowed
// slack 1e-8 * max(1, ||a||); <= 1 means the contract holds.
inline double kkt_violation(const Matrix& W, const Vector& a, const Vector& u) {
  const double slack = 1e-8 * std::max(1.0, a.norm());
  const Vector grad = W.transpose() * (W * u - a);
  double worst = 0.0;
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    if (u(k) < 0.0) return std::numeric_limits<double>::infinity();
    if (u(k) > 0.0) worst = std::max(worst, std::abs(grad(k)) / slack);
    else worst = std::max(worst, -grad(k) / slack);
  }
  return worst;
}

/// Kind of the biasprobe::Error thrown by `fn`, or nullopt when it returns.
template <typename Fn>
std::optional<ErrorKind> kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

}  // namespace biasprobe::testing
