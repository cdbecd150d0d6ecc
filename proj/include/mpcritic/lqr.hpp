// Copyright 2026 The MPCritic Authors
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

// Discrete-time infinite-horizon LQR ground truth and the error metrics
// used to compare learned parameters against it.

#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>

#include "mpcritic/diffcore.hpp"

namespace mpcritic {

class NotStabilizableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LqrProblem {
  Matrix A, B, M, R;

  Index n() const { return A.rows(); }
  Index m() const { return B.cols(); }

  void Validate() const {
    const Index n = A.rows();
    if (A.cols() != n || B.rows() != n || M.rows() != n || M.cols() != n ||
        R.rows() != B.cols() || R.cols() != B.cols()) {
      throw ConfigError("LQR problem matrices are not conformable");
    }
  }
};

struct LqrSolution {
  Matrix P;
  Matrix K;
  int iterations = 0;
};

/// K = (R + B'PB)^{-1} B'PA via Cholesky.
inline Matrix LqrGain(const LqrProblem& prob, const Matrix& P) {
  const Matrix bp = prob.B.transpose() * P;
  Eigen::LLT<Matrix> llt(prob.R + bp * prob.B);
  if (llt.info() != Eigen::Success) {
    throw NumericError("riccati", "R + B'PB is not positive definite");
  }
  return llt.solve(bp * prob.A);
}

/// One Riccati map application: M + A'PA - A'PB (R + B'PB)^{-1} B'PA.
inline Matrix RiccatiStep(const LqrProblem& prob, const Matrix& P) {
  const Matrix k = LqrGain(prob, P);
  const Matrix pa = P * prob.A;
  Matrix next = prob.M + prob.A.transpose() * pa -
                (prob.A.transpose() * P * prob.B) * k;
  return 0.5 * (next + next.transpose());
}

inline double DareResidual(const LqrProblem& prob, const Matrix& P) {
  return (P - RiccatiStep(prob, P)).cwiseAbs().maxCoeff();
}

/// Fixed-point iteration from P_0 = M until the sup-norm update is <= tol.
inline LqrSolution SolveDare(const LqrProblem& prob, double tol = 1e-12,
                             int max_iter = 100000) {
  prob.Validate();
  Matrix p = 0.5 * (prob.M + prob.M.transpose());
  for (int it = 1; it <= max_iter; ++it) {
    Matrix next = RiccatiStep(prob, p);
    if (!next.allFinite()) break;
    const double delta = (next - p).cwiseAbs().maxCoeff();
    p = std::move(next);
    if (delta <= tol) return {p, LqrGain(prob, p), it};
  }
  throw NotStabilizableError("Riccati iteration did not converge in " +
                             std::to_string(max_iter) + " iterations");
}

/// Fixed point of the one-step critic under discount gamma: the value is
/// gamma * P_g and the gain K_g, where (P_g, K_g) solve the Riccati
/// equation for (sqrt(gamma) A, sqrt(gamma) B, M, R). gamma = 1 gives the
/// plain solution.
inline LqrSolution DiscountedLqrTruth(const LqrProblem& prob, double gamma,
                                      double tol = 1e-12, int max_iter = 100000) {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw ConfigError("discount must lie in (0, 1]");
  }
  const double r = std::sqrt(gamma);
  LqrSolution sol = SolveDare({r * prob.A, r * prob.B, prob.M, prob.R}, tol, max_iter);
  sol.P *= gamma;
  return sol;
}

inline double SpectralRadius(const Matrix& a) {
  return a.eigenvalues().cwiseAbs().maxCoeff();
}

inline double ParamRmse(const Matrix& x, const Matrix& x_star) {
  if (x.rows() != x_star.rows() || x.cols() != x_star.cols()) {
    throw ConfigError("RMSE operands differ in shape");
  }
  return std::sqrt((x - x_star).squaredNorm() / static_cast<double>(x.size()));
}

/// RMSE between the closed-loop matrices A - BK and A* - B*K*.
inline double ClosedLoopRmse(const Matrix& a, const Matrix& b, const Matrix& k,
                             const Matrix& a_star, const Matrix& b_star,
                             const Matrix& k_star) {
  return ParamRmse(a - b * k, a_star - b_star * k_star);
}

/// Tridiagonal benchmark matrix: `diag` on the diagonal, `off` beside it.
inline Matrix LaplacianMatrix(Index n, double diag = 1.01, double off = 0.01) {
  Matrix a = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    a(i, i) = diag;
    if (i + 1 < n) a(i, i + 1) = a(i + 1, i) = off;
  }
  return a;
}

}  // namespace mpcritic
