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

// Finite-horizon constrained MPC used as the online actor.
//
// The linear-quadratic problem is condensed onto the action sequence U:
//
//   min  1/2 U'HU + g'U + rho * sum_j max(c_j'U + e_j, 0)   s.t. lb <= U <= ub
//
// where each (c_j, e_j) is one side of one coordinate of the state box at a
// predicted step. It is solved exactly by a primal active-set method on the
// piecewise quadratic; every accepted step is a convex combination of the
// iterate and the minimizer of the current quadratic piece, so the
// objective never increases.

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "mpcritic/components.hpp"
#include "mpcritic/mpcritic.hpp"

namespace mpcritic {

struct QpMpcProblem {
  Matrix A, B, M, R, P;
  int horizon = 10;
  BoxConstraint action_box;
  std::optional<BoxConstraint> state_box;
  double rho = 1e3;
  Vector s;

  Index n() const { return A.rows(); }
  Index m() const { return B.cols(); }

  void Validate() const {
    const Index n = A.rows(), m = B.cols();
    if (horizon < 1) throw ConfigError("MPC horizon must be >= 1");
    if (!(rho > 0.0)) throw ConfigError("MPC penalty weight must be > 0");
    if (A.cols() != n || B.rows() != n || M.rows() != n || M.cols() != n ||
        P.rows() != n || P.cols() != n || R.rows() != m || R.cols() != m ||
        s.size() != n || action_box.dim() != m) {
      throw ConfigError("MPC problem matrices are not conformable");
    }
    if (state_box && state_box->dim() != n) {
      throw ConfigError("MPC state box has the wrong dimension");
    }
  }
};

struct MpcResult {
  Matrix actions;  // m x N
  Matrix states;   // n x (N + 1)
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  double solve_seconds = 0.0;
  /// Objective after every accepted step (the first entry is the start).
  std::vector<double> objective_history;

  Vector first_action() const { return actions.col(0); }
};

/// Nearest symmetric positive semidefinite matrix (eigenvalue clipping).
inline Matrix ProjectPsd(const Matrix& p, double floor = 0.0) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (p + p.transpose()));
  const Vector d = eig.eigenvalues().cwiseMax(floor);
  return eig.eigenvectors() * d.asDiagonal() * eig.eigenvectors().transpose();
}

// ---------------------------------------------------------------------------
// Condensed form

/// One side of one state-box coordinate at predicted step t.
struct PenaltyTerm {
  int step;
  Index coord;
  bool upper;
};

struct CondensedMpc {
  Matrix H;  // Nm x Nm
  Vector g;
  double constant = 0.0;
  Matrix C;  // J x Nm
  Vector e;
  std::vector<PenaltyTerm> terms;
  Vector lb, ub;
  Matrix Sx;  // (N+1)n x n
  Matrix Su;  // (N+1)n x Nm
};

inline CondensedMpc Condense(const QpMpcProblem& prob) {
  prob.Validate();
  const Index n = prob.n(), m = prob.m();
  const int N = prob.horizon;
  CondensedMpc c;
  c.Sx.resize((N + 1) * n, n);
  c.Su = Matrix::Zero((N + 1) * n, N * m);
  c.Sx.topRows(n).setIdentity();
  for (int t = 1; t <= N; ++t) {
    c.Sx.middleRows(t * n, n) = prob.A * c.Sx.middleRows((t - 1) * n, n);
    c.Su.block(t * n, 0, n, N * m) = prob.A * c.Su.block((t - 1) * n, 0, n, N * m);
    c.Su.block(t * n, (t - 1) * m, n, m) = prob.B;
  }
  // Weighted state blocks: M for steps 0..N-1, P for step N.
  Matrix qsu((N + 1) * n, N * m);
  Vector xs = c.Sx * prob.s;
  Vector qxs((N + 1) * n);
  for (int t = 0; t <= N; ++t) {
    const Matrix& raw = t < N ? prob.M : prob.P;
    const Matrix q = 0.5 * (raw + raw.transpose());
    qsu.middleRows(t * n, n) = q * c.Su.middleRows(t * n, n);
    qxs.segment(t * n, n) = q * xs.segment(t * n, n);
  }
  c.H = 2.0 * c.Su.transpose() * qsu;
  for (int t = 0; t < N; ++t) c.H.block(t * m, t * m, m, m) += 2.0 * prob.R;
  c.H = (0.5 * (c.H + c.H.transpose())).eval();  // R may be non-symmetric
  c.g = 2.0 * c.Su.transpose() * qxs;
  c.constant = xs.dot(qxs);

  c.lb = prob.action_box.lower().replicate(N, 1);
  c.ub = prob.action_box.upper().replicate(N, 1);

  if (prob.state_box) {
    const auto& box = *prob.state_box;
    c.constant += prob.rho * box.L1(Matrix(prob.s))(0);
    const Index J = 2 * n * (N - 1);
    c.C.resize(J, N * m);
    c.e.resize(J);
    Index j = 0;
    for (int t = 1; t < N; ++t) {
      for (Index i = 0; i < n; ++i) {
        const Index row = t * n + i;
        c.C.row(j) = -c.Su.row(row);
        c.e[j] = box.lower()[i] - xs[row];
        c.terms.push_back({t, i, false});
        ++j;
        c.C.row(j) = c.Su.row(row);
        c.e[j] = xs[row] - box.upper()[i];
        c.terms.push_back({t, i, true});
        ++j;
      }
    }
  } else {
    c.C.resize(0, N * m);
    c.e.resize(0);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Active-set solver for the box-constrained piecewise quadratic

struct PwqSolution {
  Vector u;
  int iterations = 0;
  bool converged = false;
  std::vector<double> history;
  std::vector<int> bound_state;  // -1 at lower, +1 at upper, 0 free
  std::vector<int> term_state;   // -1 inactive side, 0 held at kink, +1 active side
};

class PwqActiveSet {
 public:
  PwqActiveSet(const Matrix& H, const Vector& g, const Matrix& C,
               const Vector& e, double rho, const Vector& lb, const Vector& ub)
      : H_(H), g_(g), C_(C), e_(e), rho_(rho), lb_(lb), ub_(ub) {}

  double Objective(const Vector& u) const {
    double f = 0.5 * u.dot(H_ * u) + g_.dot(u);
    if (C_.rows() > 0) f += rho_ * (C_ * u + e_).cwiseMax(0.0).sum();
    return f;
  }

  PwqSolution Solve(const Vector& u0, double tol, int max_iter) const {
    const Index p = H_.rows(), J = C_.rows();
    PwqSolution sol;
    Vector u = u0.cwiseMax(lb_).cwiseMin(ub_);
    sol.bound_state.assign(p, 0);
    for (Index i = 0; i < p; ++i) {
      if (u[i] <= lb_[i]) sol.bound_state[i] = -1;
      else if (u[i] >= ub_[i]) sol.bound_state[i] = 1;
    }
    sol.term_state.assign(J, -1);
    if (J > 0) {
      const Vector z = C_ * u + e_;
      for (Index j = 0; j < J; ++j) sol.term_state[j] = z[j] > 0.0 ? 1 : -1;
    }
    sol.history.push_back(Objective(u));

    const double scale = 1.0 + g_.lpNorm<Eigen::Infinity>() +
                         H_.lpNorm<Eigen::Infinity>() + rho_;
    const double mult_tol = tol * scale;

    for (int it = 0; it < max_iter; ++it) {
      sol.iterations = it + 1;
      Vector u_star, lambda, grad;
      SolveEqp(sol, &u_star, &lambda, &grad);
      const Vector d = u_star - u;
      if (d.lpNorm<Eigen::Infinity>() <= 1e-13 * (1.0 + u.lpNorm<Eigen::Infinity>())) {
        u = u_star;
        if (!ReleaseWorst(lambda, grad, mult_tol, &sol)) {
          sol.converged = true;
          break;
        }
        continue;
      }
      StepTowards(d, &u, &sol);
      sol.history.push_back(Objective(u));
    }
    sol.u = u;
    return sol;
  }

 private:
  // Minimizer of the quadratic piece selected by the working set, with
  // kink multipliers (indexed like the terms) and the full gradient of the
  // Lagrangian without bound multipliers.
  void SolveEqp(const PwqSolution& sol, Vector* u_star,
                Vector* lambda, Vector* grad) const {
    const Index p = H_.rows(), J = C_.rows();
    std::vector<Index> free_idx, kinks;
    Vector fixed = Vector::Zero(p);
    for (Index i = 0; i < p; ++i) {
      if (sol.bound_state[i] == 0) {
        free_idx.push_back(i);
      } else {
        fixed[i] = sol.bound_state[i] < 0 ? lb_[i] : ub_[i];
      }
    }
    Vector gw = g_;
    for (Index j = 0; j < J; ++j) {
      if (sol.term_state[j] == 1) gw += rho_ * C_.row(j).transpose();
      if (sol.term_state[j] == 0) kinks.push_back(j);
    }
    const Index nf = static_cast<Index>(free_idx.size());
    const Index nk = static_cast<Index>(kinks.size());
    *lambda = Vector::Zero(J);
    *u_star = fixed;
    if (nf > 0) {
      Matrix hff(nf, nf);
      Vector h(nf);
      const Vector hfix = H_ * fixed + gw;
      for (Index a = 0; a < nf; ++a) {
        h[a] = hfix[free_idx[a]];
        for (Index b = 0; b < nf; ++b) hff(a, b) = H_(free_idx[a], free_idx[b]);
      }
      Eigen::LLT<Matrix> llt(hff);
      if (llt.info() != Eigen::Success) {
        throw NumericError("mpc", "condensed Hessian is not positive definite");
      }
      Vector uf = -llt.solve(h);
      if (nk > 0) {
        Matrix ckf(nk, nf);
        Vector r(nk);
        for (Index a = 0; a < nk; ++a) {
          for (Index b = 0; b < nf; ++b) ckf(a, b) = C_(kinks[a], free_idx[b]);
          r[a] = C_.row(kinks[a]).dot(fixed) + e_[kinks[a]];
        }
        const Matrix x_c = llt.solve(ckf.transpose());
        const Matrix s = ckf * x_c;
        // uf currently holds -H^{-1} h.
        const Vector lam = s.ldlt().solve(r + ckf * uf);
        uf -= x_c * lam;
        for (Index a = 0; a < nk; ++a) (*lambda)[kinks[a]] = lam[a];
      }
      for (Index a = 0; a < nf; ++a) (*u_star)[free_idx[a]] = uf[a];
    }
    *grad = H_ * (*u_star) + gw;
    if (J > 0) *grad += C_.transpose() * (*lambda);
  }

  // Drops the working-set entry whose multiplier is most out of range.
  // Returns false when every multiplier is admissible (optimal point).
  bool ReleaseWorst(const Vector& lambda, const Vector& grad, double mult_tol,
                    PwqSolution* sol) const {
    double worst = mult_tol;
    Index which = -1;
    bool is_term = false;
    int new_state = 0;
    for (Index j = 0; j < static_cast<Index>(sol->term_state.size()); ++j) {
      if (sol->term_state[j] != 0) continue;
      if (lambda[j] - rho_ > worst) {
        worst = lambda[j] - rho_;
        which = j, is_term = true, new_state = 1;
      } else if (-lambda[j] > worst) {
        worst = -lambda[j];
        which = j, is_term = true, new_state = -1;
      }
    }
    for (Index i = 0; i < static_cast<Index>(sol->bound_state.size()); ++i) {
      const int b = sol->bound_state[i];
      // At the lower bound the objective must not decrease when u_i grows.
      const double v = b < 0 ? -grad[i] : b > 0 ? grad[i] : 0.0;
      if (v > worst) {
        worst = v;
        which = i, is_term = false;
      }
    }
    if (which < 0) return false;
    if (is_term) {
      sol->term_state[which] = new_state;
    } else {
      sol->bound_state[which] = 0;
    }
    return true;
  }

  // Moves along d as far as the current piece allows (at most to its
  // minimizer) and adds the first blocking bound or kink.
  void StepTowards(const Vector& d, Vector* u, PwqSolution* sol) const {
    const Index p = H_.rows(), J = C_.rows();
    double alpha = 1.0;
    Index block = -1;
    bool block_term = false;
    for (Index i = 0; i < p; ++i) {
      if (sol->bound_state[i] != 0) continue;
      double a = std::numeric_limits<double>::infinity();
      if (d[i] < 0.0) a = (lb_[i] - (*u)[i]) / d[i];
      if (d[i] > 0.0) a = (ub_[i] - (*u)[i]) / d[i];
      if (a < alpha) {
        alpha = std::max(a, 0.0);
        block = i, block_term = false;
      }
    }
    if (J > 0) {
      const Vector z = C_ * (*u) + e_;
      const Vector cd = C_ * d;
      for (Index j = 0; j < J; ++j) {
        const int st = sol->term_state[j];
        if (st == 0) continue;
        if ((st > 0 && cd[j] < 0.0) || (st < 0 && cd[j] > 0.0)) {
          const double a = -z[j] / cd[j];
          if (a < alpha) {
            alpha = std::max(a, 0.0);
            block = j, block_term = true;
          }
        }
      }
    }
    *u += alpha * d;
    if (block < 0) return;
    if (block_term) {
      sol->term_state[block] = 0;
    } else {
      sol->bound_state[block] = d[block] < 0.0 ? -1 : 1;
      (*u)[block] = d[block] < 0.0 ? lb_[block] : ub_[block];
    }
  }

  const Matrix& H_;
  const Vector& g_;
  const Matrix& C_;
  const Vector& e_;
  double rho_;
  const Vector& lb_;
  const Vector& ub_;
};

/// Predicted states for an action sequence (m x N) under (A, B) from s.
inline Matrix PredictStates(const Matrix& a, const Matrix& b, const Vector& s,
                            const Matrix& actions) {
  Matrix x(a.rows(), actions.cols() + 1);
  x.col(0) = s;
  for (Index t = 0; t < actions.cols(); ++t) {
    x.col(t + 1) = a * x.col(t) + b * actions.col(t);
  }
  return x;
}

/// Objective of the uncondensed problem for an action sequence.
inline double MpcObjective(const QpMpcProblem& prob, const Matrix& actions) {
  const Matrix x = PredictStates(prob.A, prob.B, prob.s, actions);
  double f = 0.0;
  for (int t = 0; t < prob.horizon; ++t) {
    f += x.col(t).dot(prob.M * x.col(t)) +
         actions.col(t).dot(prob.R * actions.col(t));
    if (prob.state_box) f += prob.rho * prob.state_box->L1(Matrix(x.col(t)))(0);
  }
  const Index N = prob.horizon;
  return f + x.col(N).dot(prob.P * x.col(N));
}

/// Working set at the solution, kept for sensitivity analysis.
struct MpcActiveSet {
  std::vector<int> bound_state;
  std::vector<int> term_state;
  std::vector<PenaltyTerm> terms;
};

/// Solves the condensed problem. `warm_start` (m x N) seeds the iterate.
inline MpcResult SolveMpc(const QpMpcProblem& prob, double tol = 1e-9,
                          int max_iter = 1000,
                          const Matrix* warm_start = nullptr,
                          MpcActiveSet* active = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const CondensedMpc c = Condense(prob);
  const Index m = prob.m();
  const int N = prob.horizon;
  Vector u0 = Vector::Zero(N * m);
  if (warm_start) {
    if (warm_start->rows() != m || warm_start->cols() != N) {
      throw ConfigError("warm start has the wrong shape");
    }
    u0 = Eigen::Map<const Vector>(warm_start->data(), N * m);
  }
  PwqActiveSet solver(c.H, c.g, c.C, c.e, prob.rho, c.lb, c.ub);
  PwqSolution sol = solver.Solve(u0, tol, max_iter);

  MpcResult r;
  r.actions = Eigen::Map<const Matrix>(sol.u.data(), m, N);
  r.actions = r.actions.cwiseMax(prob.action_box.lower().replicate(1, N))
                  .cwiseMin(prob.action_box.upper().replicate(1, N));
  r.states = PredictStates(prob.A, prob.B, prob.s, r.actions);
  r.objective = MpcObjective(prob, r.actions);
  r.iterations = sol.iterations;
  r.converged = sol.converged;
  for (double h : sol.history) r.objective_history.push_back(h + c.constant);
  if (active) *active = {sol.bound_state, sol.term_state, c.terms};
  r.solve_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------------------
// Parametric sensitivity by implicit differentiation of the KKT system

/// Jacobian of the primal-dual solution w.r.t. the problem data. Columns
/// are ordered [vec(A), vec(B), vec(M), vec(R), vec(P), s]; rows start with
/// the stacked actions u_0..u_{N-1}, followed by x_1..x_N and the
/// multipliers.
struct MpcSensitivity {
  Matrix jacobian;
  Index num_actions = 0;

  auto action_jacobian() const { return jacobian.topRows(num_actions); }
};

inline MpcSensitivity MpcKktSensitivity(const QpMpcProblem& prob,
                                        const MpcResult& res,
                                        const MpcActiveSet& active) {
  const Index n = prob.n(), m = prob.m();
  const Index N = prob.horizon;
  std::vector<Index> bounds;
  for (Index i = 0; i < static_cast<Index>(active.bound_state.size()); ++i) {
    if (active.bound_state[i] != 0) bounds.push_back(i);
  }
  std::vector<Index> kinks;
  for (Index j = 0; j < static_cast<Index>(active.term_state.size()); ++j) {
    if (active.term_state[j] == 0) kinks.push_back(j);
  }
  const Index nb = static_cast<Index>(bounds.size());
  const Index nk = static_cast<Index>(kinks.size());
  // Variable blocks.
  const Index ou = 0, ox = N * m, ov = ox + N * n, os = ov + N * n,
              ol = os + nb, dim = ol + nk;
  auto U = [&](Index t) { return ou + t * m; };
  auto X = [&](Index t) { return ox + (t - 1) * n; };  // t = 1..N
  auto V = [&](Index t) { return ov + (t - 1) * n; };  // multiplier of x_t

  Matrix K = Matrix::Zero(dim, dim);
  Vector rhs = Vector::Zero(dim);
  const Matrix R2 = prob.R + prob.R.transpose();
  const Matrix M2 = prob.M + prob.M.transpose();
  const Matrix P2 = prob.P + prob.P.transpose();
  // Rows in the same order as the variables: stationarity in u, in x, then
  // dynamics (paired with the multipliers), bounds, kinks.
  for (Index t = 0; t < N; ++t) {
    K.block(U(t), U(t), m, m) = R2;
    K.block(U(t), V(t + 1), m, n) = prob.B.transpose();
  }
  for (Index t = 1; t <= N; ++t) {
    K.block(X(t), X(t), n, n) = t < N ? M2 : P2;
    K.block(X(t), V(t), n, n) = -Matrix::Identity(n, n);
    if (t < N) K.block(X(t), V(t + 1), n, n) = prob.A.transpose();
  }
  // Dynamics rows: A x_t + B u_t - x_{t+1} = 0.
  for (Index t = 0; t < N; ++t) {
    const Index row = V(t + 1);
    if (t >= 1) K.block(row, X(t), n, n) = prob.A;
    K.block(row, U(t), n, m) = prob.B;
    K.block(row, X(t + 1), n, n) = -Matrix::Identity(n, n);
    if (t == 0) rhs.segment(row, n) = -prob.A * prob.s;
  }
  for (Index a = 0; a < nb; ++a) {
    const Index i = bounds[a];
    K(os + a, i) = K(i, os + a) = 1.0;
    rhs[os + a] = active.bound_state[i] < 0
                      ? prob.action_box.lower()[i % m]
                      : prob.action_box.upper()[i % m];
  }
  // Active penalty sides contribute a constant slope; kinks are equalities.
  for (Index j = 0; j < static_cast<Index>(active.terms.size()); ++j) {
    const auto& term = active.terms[j];
    if (active.term_state[j] == 1) {
      rhs[X(term.step) + term.coord] -= term.upper ? prob.rho : -prob.rho;
    }
  }
  for (Index a = 0; a < nk; ++a) {
    const auto& term = active.terms[kinks[a]];
    const Index col = X(term.step) + term.coord;
    const double sign = term.upper ? 1.0 : -1.0;
    K(ol + a, col) = K(col, ol + a) = sign;
    rhs[ol + a] = term.upper ? prob.state_box->upper()[term.coord]
                             : -prob.state_box->lower()[term.coord];
  }

  Eigen::PartialPivLU<Matrix> lu(K);
  const Vector z = lu.solve(rhs);

  auto xs = [&](Index t) -> Vector {
    return t == 0 ? Vector(prob.s) : Vector(z.segment(X(t), n));
  };
  auto us = [&](Index t) -> Vector { return z.segment(U(t), m); };
  auto nus = [&](Index t) -> Vector { return z.segment(V(t), n); };

  const Index cA = 0, cB = cA + n * n, cM = cB + n * m, cR = cM + n * n,
              cP = cR + m * m, cS = cP + n * n, ncol = cS + n;
  Matrix D = Matrix::Zero(dim, ncol);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < n; ++i) {
      const Index col = cA + i + j * n;
      for (Index t = 0; t < N; ++t) {
        if (t >= 1) D(X(t) + j, col) += nus(t + 1)[i];
        D(V(t + 1) + i, col) += xs(t)[j];
      }
    }
  }
  for (Index j = 0; j < m; ++j) {
    for (Index i = 0; i < n; ++i) {
      const Index col = cB + i + j * n;
      for (Index t = 0; t < N; ++t) {
        D(U(t) + j, col) += nus(t + 1)[i];
        D(V(t + 1) + i, col) += us(t)[j];
      }
    }
  }
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < n; ++i) {
      for (Index t = 1; t < N; ++t) {
        D(X(t) + i, cM + i + j * n) += xs(t)[j];
        D(X(t) + j, cM + i + j * n) += xs(t)[i];
      }
      D(X(N) + i, cP + i + j * n) += xs(N)[j];
      D(X(N) + j, cP + i + j * n) += xs(N)[i];
    }
  }
  for (Index j = 0; j < m; ++j) {
    for (Index i = 0; i < m; ++i) {
      for (Index t = 0; t < N; ++t) {
        D(U(t) + i, cR + i + j * m) += us(t)[j];
        D(U(t) + j, cR + i + j * m) += us(t)[i];
      }
    }
  }
  D.block(V(1), cS, n, n) = prob.A;

  MpcSensitivity out;
  out.jacobian = -lu.solve(D);
  out.num_actions = N * m;
  (void)res;
  return out;
}

// ---------------------------------------------------------------------------
// First-order shooting for specs with neural components

/// Unscaled MPC objective of an MpcCriticSpec for a free action sequence:
/// sum_{t<N} (l(x_t, u_t) + rho * viol(x_t)) + V(x_N). The gradient w.r.t.
/// the actions (m x N) is written to `grad` when non-null.
inline double SequenceObjective(const MpcCriticSpec& spec, const Vector& s,
                                const Matrix& actions, Matrix* grad,
                                Matrix* states = nullptr) {
  const int N = spec.horizon;
  std::vector<Matrix> xs{Matrix(s)};
  std::vector<Trace> dyn(N);
  double f = 0.0;
  for (int t = 0; t < N; ++t) {
    const Matrix u = actions.col(t);
    f += spec.stage->Cost(xs[t], u)(0);
    if (spec.state_box) f += spec.penalty * spec.state_box->L1(xs[t])(0);
    xs.push_back(spec.dynamics->Predict(xs[t], u, &dyn[t]));
  }
  Trace term;
  f += spec.terminal->Value(xs[N], spec.controller.get(), &term)(0);
  if (states) {
    states->resize(s.size(), N + 1);
    for (int t = 0; t <= N; ++t) states->col(t) = xs[t].col(0);
  }
  if (!grad) return f;
  grad->resize(actions.rows(), N);
  const RowVector one = RowVector::Ones(1);
  Matrix g_x, g_xt, g_ut;
  spec.terminal->Backward(term, one, &g_x, nullptr, spec.controller.get(), nullptr);
  for (int t = N - 1; t >= 0; --t) {
    spec.dynamics->Backward(dyn[t], g_x, &g_xt, &g_ut, nullptr);
    spec.stage->Backward(xs[t], actions.col(t), one, &g_xt, &g_ut, nullptr);
    if (spec.state_box) g_xt += spec.penalty * spec.state_box->L1Grad(xs[t]);
    grad->col(t) = g_ut.col(0);
    g_x = std::move(g_xt);
  }
  return f;
}

struct ShootingOptions {
  double tol = 1e-8;
  int max_iter = 500;
  int restarts = 1;
  std::uint64_t seed = 0;
};

/// Projected-gradient shooting over the action sequence with backtracking.
/// Run 0 starts from the controller's own rollout; later runs start from
/// uniform draws in the action box. The best run is returned.
inline MpcResult SolveMpcNonlinear(const MpcCriticSpec& spec,
                                   const BoxConstraint& action_box,
                                   const Vector& s,
                                   const ShootingOptions& opt = {}) {
  if (opt.restarts < 1) throw ConfigError("restarts must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  const int N = spec.horizon;
  const Index m = spec.action_dim();
  const Matrix lo = action_box.lower().replicate(1, N);
  const Matrix hi = action_box.upper().replicate(1, N);
  auto project = [&](const Matrix& u) -> Matrix { return u.cwiseMax(lo).cwiseMin(hi); };

  MpcResult best;
  best.objective = std::numeric_limits<double>::infinity();
  for (int run = 0; run < opt.restarts; ++run) {
    Matrix u(m, N);
    if (run == 0) {
      Vector x = s;
      for (int t = 0; t < N; ++t) {
        u.col(t) = spec.controller->Act(x);
        x = spec.dynamics->Predict(x, Vector(u.col(t)));
      }
    } else {
      std::mt19937_64 rng(opt.seed + static_cast<std::uint64_t>(run));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (Index k = 0; k < u.size(); ++k) {
        const Index i = k % m;
        u(k) = action_box.lower()[i] +
               unit(rng) * (action_box.upper()[i] - action_box.lower()[i]);
      }
    }
    u = project(u);
    MpcResult r;
    Matrix g;
    double f = SequenceObjective(spec, s, u, &g);
    r.objective_history.push_back(f);
    double step = 1.0;
    for (int it = 0; it < opt.max_iter; ++it) {
      const double res = (project(u - g) - u).lpNorm<Eigen::Infinity>();
      if (res <= opt.tol) {
        r.converged = true;
        break;
      }
      r.iterations = it + 1;
      bool accepted = false;
      step = std::min(step * 2.0, 1e6);
      while (step > 1e-16) {
        const Matrix cand = project(u - step * g);
        const double fc = SequenceObjective(spec, s, cand, nullptr);
        if (fc <= f - 1e-4 / step * (cand - u).squaredNorm()) {
          u = cand;
          f = SequenceObjective(spec, s, u, &g);
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) break;  // no further decrease at machine precision
      r.objective_history.push_back(f);
    }
    r.actions = u;
    r.objective = SequenceObjective(spec, s, u, nullptr, &r.states);
    if (r.objective < best.objective) best = std::move(r);
  }
  best.solve_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return best;
}

}  // namespace mpcritic
