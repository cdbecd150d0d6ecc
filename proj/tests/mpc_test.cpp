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

#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "mpcritic/lqr.hpp"
#include "mpcritic/mpc.hpp"
#include "mpcritic/timing.hpp"
#include "test_util.hpp"

namespace mpcritic {
namespace {

using testing::RandomMatrix;
using testing::TestRng;

Matrix RandomPd(Index n, TestRng& rng) {
  const Matrix l = RandomMatrix(n, n, 1.0, rng);
  return l * l.transpose() + 0.2 * Matrix::Identity(n, n);
}

QpMpcProblem RandomQp(TestRng& rng, Index n, Index m, int horizon, double state_half_width,
                      double rho) {
  QpMpcProblem p;
  p.A = RandomMatrix(n, n, 1.0, rng);
  p.A *= 1.1 / SpectralRadius(p.A);
  p.B = RandomMatrix(n, m, 1.0, rng);
  p.M = RandomPd(n, rng);
  p.R = RandomPd(m, rng);
  p.P = RandomPd(n, rng);
  p.horizon = horizon;
  p.action_box = BoxConstraint::Symmetric(m, 1.0);
  p.state_box = BoxConstraint::Symmetric(n, state_half_width);
  p.rho = rho;
  p.s = RandomMatrix(n, 1, 1.0, rng);
  return p;
}

TEST(SolveMpc, OriginStaysAtOrigin) {
  QpMpcProblem p;
  p.A = LaplacianMatrix(3);
  p.B = Matrix::Identity(3, 3);
  p.M = p.R = p.P = Matrix::Identity(3, 3);
  p.horizon = 5;
  p.action_box = BoxConstraint::Symmetric(3, 1.0);
  p.state_box = BoxConstraint::Symmetric(3, 1.0);
  p.s = Vector::Zero(3);
  const MpcResult r = SolveMpc(p);
  EXPECT_TRUE(r.converged);
  EXPECT_TRUE(r.actions.isZero(0.0));
  EXPECT_DOUBLE_EQ(r.objective, 0.0);
}

TEST(SolveMpc, RiccatiTerminalRecoversLqrGain) {
  TestRng rng(41);
  for (int horizon : {1, 10, 20}) {
    for (int trial = 0; trial < 20; ++trial) {
      const Index n = 1 + trial % 4, m = 1 + (trial / 4) % 4;
      QpMpcProblem p = RandomQp(rng, n, m, horizon, 1e6, 1e3);
      p.action_box = BoxConstraint::Symmetric(m, 1e6);
      const LqrSolution sol = SolveDare({p.A, p.B, p.M, p.R});
      p.P = sol.P;
      const MpcResult r = SolveMpc(p);
      EXPECT_TRUE(r.converged);
      EXPECT_LE((r.first_action() + sol.K * p.s).lpNorm<Eigen::Infinity>(), 1e-5)
          << "N=" << horizon << " trial " << trial;
    }
  }
}

TEST(SolveMpc, ScalarClampsToNearerBound) {
  QpMpcProblem p;
  p.A = Matrix::Constant(1, 1, 2.0);
  p.B = p.M = p.R = Matrix::Ones(1, 1);
  const LqrSolution sol = SolveDare({p.A, p.B, p.M, p.R});
  p.P = sol.P;
  p.horizon = 1;
  p.action_box = BoxConstraint::Symmetric(1, 0.5);
  p.s = Vector::Constant(1, 0.8 / sol.K(0, 0));
  const MpcResult r = SolveMpc(p);
  EXPECT_DOUBLE_EQ(r.first_action()[0], -0.5);
  p.action_box = BoxConstraint::Symmetric(1, 5.0);
  EXPECT_NEAR(SolveMpc(p).first_action()[0], -0.8, 1e-12);
}

// Convexity makes local optimality global: no feasible perturbation may
// decrease the objective.
TEST(SolveMpc, NoFeasibleDescentAroundSolution) {
  TestRng rng(42);
  std::uniform_int_distribution<int> dim(1, 4), hor(1, 8);
  for (int trial = 0; trial < 40; ++trial) {
    const Index n = dim(rng), m = dim(rng);
    const QpMpcProblem p = RandomQp(rng, n, m, hor(rng), 0.6, 5.0);
    const MpcResult r = SolveMpc(p);
    ASSERT_TRUE(r.converged);
    const double f = r.objective;
    for (int k = 0; k < 100; ++k) {
      const double scale = k < 50 ? 1e-4 : 1e-1;
      Matrix u = r.actions + RandomMatrix(m, p.horizon, scale, rng);
      u = u.cwiseMax(-1.0).cwiseMin(1.0);
      EXPECT_GE(MpcObjective(p, u), f - 1e-9 * std::max(1.0, std::abs(f)));
    }
  }
}

TEST(SolveMpc, ObjectiveHistoryIsMonotone) {
  TestRng rng(43);
  for (int trial = 0; trial < 30; ++trial) {
    const QpMpcProblem p = RandomQp(rng, 3, 2, 6, 0.4, 20.0);
    const MpcResult r = SolveMpc(p);
    ASSERT_GE(r.objective_history.size(), 1u);
    for (std::size_t i = 1; i < r.objective_history.size(); ++i) {
      EXPECT_LE(r.objective_history[i], r.objective_history[i - 1] + 1e-9);
    }
    EXPECT_NEAR(r.objective_history.back(), r.objective, 1e-7 * std::max(1.0, r.objective));
  }
}

TEST(SolveMpc, ScalingCostsLeavesActionsUnchanged) {
  TestRng rng(44);
  for (int trial = 0; trial < 10; ++trial) {
    const QpMpcProblem p = RandomQp(rng, 3, 3, 5, 0.5, 10.0);
    QpMpcProblem q = p;
    q.M *= 7.0;
    q.R *= 7.0;
    q.P *= 7.0;
    q.rho *= 7.0;
    const MpcResult a = SolveMpc(p), b = SolveMpc(q);
    EXPECT_LE((a.actions - b.actions).lpNorm<Eigen::Infinity>(), 1e-8);
    EXPECT_NEAR(b.objective, 7.0 * a.objective, 1e-8 * std::max(1.0, b.objective));
  }
}

TEST(SolveMpc, WarmStartGivesSameSolution) {
  TestRng rng(45);
  const QpMpcProblem p = RandomQp(rng, 4, 2, 8, 0.5, 10.0);
  const MpcResult cold = SolveMpc(p);
  const MpcResult warm = SolveMpc(p, 1e-9, 1000, &cold.actions);
  EXPECT_LE((cold.actions - warm.actions).lpNorm<Eigen::Infinity>(), 1e-9);
  EXPECT_LE(warm.iterations, 1);
  const Matrix wrong = Matrix::Zero(3, 8);
  EXPECT_THROW(SolveMpc(p, 1e-9, 1000, &wrong), ConfigError);
}

TEST(SolveMpc, RejectsMalformedProblem) {
  TestRng rng(46);
  QpMpcProblem p = RandomQp(rng, 3, 2, 4, 1.0, 1.0);
  p.P = Matrix::Identity(2, 2);
  EXPECT_THROW(SolveMpc(p), ConfigError);
  p = RandomQp(rng, 3, 2, 0, 1.0, 1.0);
  EXPECT_THROW(SolveMpc(p), ConfigError);
}

TEST(ProjectPsd, ClipsNegativeEigenvalues) {
  Matrix a(2, 2);
  a << 1.0, 0.0, 0.0, -2.0;
  const Matrix p = ProjectPsd(a);
  EXPECT_NEAR(p(1, 1), 0.0, 1e-15);
  EXPECT_NEAR(p(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(ProjectPsd(a, 0.5)(1, 1), 0.5, 1e-15);
}

// ---------------------------------------------------------------------------
// KKT sensitivity against re-solving with perturbed data.

QpMpcProblem Perturb(const QpMpcProblem& p, Index col, double eps) {
  QpMpcProblem q = p;
  const Index n = p.n(), m = p.m();
  Index c = col;
  auto bump = [&](Matrix& x) {
    if (c < x.size()) {
      x(c) += eps;
      return true;
    }
    c -= x.size();
    return false;
  };
  if (bump(q.A) || bump(q.B) || bump(q.M) || bump(q.R) || bump(q.P)) return q;
  if (c < n) q.s[c] += eps;
  (void)m;
  return q;
}

TEST(MpcKktSensitivity, MatchesFiniteDifferences) {
  TestRng rng(47);
  int with_bounds = 0, with_kinks = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 2 + trial % 2, m = 1 + trial % 3;
    const QpMpcProblem p = RandomQp(rng, n, m, 2 + trial % 4, 0.5, 3.0);
    MpcActiveSet active;
    const MpcResult r = SolveMpc(p, 1e-12, 1000, nullptr, &active);
    ASSERT_TRUE(r.converged);
    for (int b : active.bound_state) with_bounds += b != 0;
    for (int t : active.term_state) with_kinks += t == 0;
    const MpcSensitivity sens = MpcKktSensitivity(p, r, active);
    const Index cols = sens.jacobian.cols();
    ASSERT_EQ(cols, 3 * n * n + n * m + m * m + n);
    const Matrix J = sens.action_jacobian();
    const double eps = 1e-6;
    for (Index col = 0; col < cols; ++col) {
      const Matrix up = SolveMpc(Perturb(p, col, eps), 1e-13, 1000).actions;
      const Matrix dn = SolveMpc(Perturb(p, col, -eps), 1e-13, 1000).actions;
      const Vector fd = Eigen::Map<const Vector>(Matrix((up - dn) / (2 * eps)).data(), up.size());
      const double err = (fd - J.col(col)).lpNorm<Eigen::Infinity>();
      EXPECT_LE(err, 1e-5 * std::max(1.0, fd.lpNorm<Eigen::Infinity>()))
          << "trial " << trial << " column " << col;
    }
  }
  EXPECT_GT(with_bounds, 0);
  EXPECT_GT(with_kinks, 0);
}

// ---------------------------------------------------------------------------
// Shooting solver on a linear-quadratic spec, with the QP as oracle.

MpcCriticSpec SpecFromQp(const QpMpcProblem& p) {
  MpcCriticSpec spec;
  spec.stage = std::make_shared<QuadraticStageCost>(p.M, p.R);
  spec.terminal = std::make_shared<QuadraticTerminal>(p.P);
  spec.dynamics = std::make_shared<LinearDynamics>(p.A, p.B);
  spec.controller = std::make_shared<LinearGainController>(Matrix::Zero(p.m(), p.n()));
  spec.state_box = p.state_box;
  spec.penalty = p.rho;
  spec.horizon = p.horizon;
  return spec;
}

TEST(SolveMpcNonlinear, AgreesWithQpSolver) {
  TestRng rng(48);
  for (int trial = 0; trial < 15; ++trial) {
    QpMpcProblem p = RandomQp(rng, 1 + trial % 4, 1 + trial % 3, 1 + trial % 6, 1e3, 1.0);
    p.s *= 2.0;  // some action bounds become active
    const MpcResult qp = SolveMpc(p, 1e-12);
    const MpcResult sh = SolveMpcNonlinear(SpecFromQp(p), p.action_box, p.s,
                                           {.tol = 1e-10, .max_iter = 20000});
    EXPECT_NEAR(sh.objective, qp.objective, 1e-6 * std::max(1.0, std::abs(qp.objective)))
        << trial;
  }
}

TEST(SolveMpcNonlinear, WarmStartAtOptimumConvergesImmediately) {
  TestRng rng(49);
  const QpMpcProblem p = RandomQp(rng, 2, 2, 1, 1e3, 1.0);
  const MpcResult qp = SolveMpc(p, 1e-13);
  // With N = 1 the first run starts at mu(s); set mu to reproduce the optimum.
  MpcCriticSpec spec = SpecFromQp(p);
  const Matrix k = -qp.first_action() * p.s.transpose() / p.s.squaredNorm();
  spec.controller = std::make_shared<LinearGainController>(k);
  const MpcResult sh = SolveMpcNonlinear(spec, p.action_box, p.s, {.tol = 1e-6});
  EXPECT_TRUE(sh.converged);
  EXPECT_LE(sh.iterations, 2);
}

TEST(SolveMpcNonlinear, RestartsAreMonotone) {
  TestRng rng(50);
  auto mu = std::make_shared<MlpController>(2, std::vector<Index>{8},
                                            BoxConstraint::Symmetric(1, 1.0));
  mu->net().InitDefault(rng);
  auto f = std::make_shared<MlpDynamics>(2, 1, std::vector<Index>{8});
  f->net().InitNormal(rng, 0.8);
  MpcCriticSpec spec;
  spec.stage = std::make_shared<GaussianStageCost>(0.6, 0.25, 1);
  spec.terminal = std::make_shared<QuadraticTerminal>(Matrix::Identity(2, 2));
  spec.dynamics = f;
  spec.controller = mu;
  spec.state_box = BoxConstraint::Symmetric(2, 0.8);
  spec.horizon = 4;
  const Vector s{{0.1, 0.3}};
  double prev = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 4; ++k) {
    const MpcResult r =
        SolveMpcNonlinear(spec, BoxConstraint::Symmetric(1, 1.0), s, {.restarts = k, .seed = 9});
    EXPECT_LE(r.objective, prev);
    prev = r.objective;
    EXPECT_LE(r.actions.maxCoeff(), 1.0);
    EXPECT_GE(r.actions.minCoeff(), -1.0);
  }
  EXPECT_THROW(SolveMpcNonlinear(spec, BoxConstraint::Symmetric(1, 1.0), s, {.restarts = 0}),
               ConfigError);
}

// ---------------------------------------------------------------------------
// Timing harness.

TEST(Timing, ControllerWorkloadGrowsWithBatch) {
  TestRng rng(51);
  MlpController mu(16, {100, 100}, BoxConstraint::Symmetric(16, 1.0));
  mu.net().InitDefault(rng);
  const QpMpcProblem qp = TimingProblem(16, 1, 1e3);
  const Matrix one = testing::UniformMatrix(16, 1, -1, 1, rng);
  const Matrix many = testing::UniformMatrix(16, 256, -1, 1, rng);
  const TimingSample a = TimeForwardBackward(TimedPolicy::kController, mu, qp, one, 50);
  const TimingSample b = TimeForwardBackward(TimedPolicy::kController, mu, qp, many, 50);
  EXPECT_LE(a.forward_s, b.forward_s);
}

TEST(Timing, SolverIterationsAreDeterministic) {
  TestRng r1(52), r2(52);
  MlpController mu(4, {10}, BoxConstraint::Symmetric(4, 1.0));
  const QpMpcProblem qp = TimingProblem(4, 3, 1e3);
  const Matrix s1 = testing::UniformMatrix(4, 16, -1, 1, r1);
  const Matrix s2 = testing::UniformMatrix(4, 16, -1, 1, r2);
  const TimingSample a = TimeForwardBackward(TimedPolicy::kMpc, mu, qp, s1, 1);
  const TimingSample b = TimeForwardBackward(TimedPolicy::kMpc, mu, qp, s2, 1);
  EXPECT_EQ(a.iterations, b.iterations);
  EXPECT_GT(a.iterations, 0);
}

TEST(Timing, OneRecordPerSizePolicyDirection) {
  TimingOptions opt;
  opt.sizes = {2, 3};
  opt.batch = 8;
  opt.seeds = 2;
  opt.hidden = {8};
  opt.repeats = 1;
  const auto records = RunTimingBench(opt);
  ASSERT_EQ(records.size(), 8u);
  for (Index n : opt.sizes) {
    for (const char* policy : {"mu", "mpc"}) {
      for (const char* dir : {"forward", "backward"}) {
        int count = 0;
        for (const auto& r : records) {
          count += r.n == n && r.policy == policy && r.direction == dir;
        }
        EXPECT_EQ(count, 1);
      }
    }
  }
}

}  // namespace
}  // namespace mpcritic
