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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "biasprobe/error.hpp"

namespace biasprobe {

/// Dense row-major real matrix: activations, factors, gradients.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Single-precision storage used for model parameters and bundle payloads.
using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using FloatVector = Eigen::VectorXf;

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& values, const std::string& what) {
  if (!values.allFinite()) fail(ErrorKind::NonFinite, what + " contains NaN or Inf");
}

inline double cosine_similarity(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) fail(ErrorKind::DimensionMismatch, "cosine_similarity: vector lengths differ");
  const double nu = u.norm();
  const double nv = v.norm();
  if (!(nu > 0.0) || !(nv > 0.0)) fail(ErrorKind::ZeroVector, "cosine_similarity: zero-norm input");
  const double c = u.dot(v) / (nu * nv);
  return std::clamp(c, -1.0, 1.0);
}

/// Lowest index among tied maxima.
template <typename Derived>
std::size_t argmax(const Eigen::DenseBase<Derived>& values) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (values(i) > values(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(i);
  }
  return best;
}

}  // namespace biasprobe
