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

#include <deque>

#include "mpcritic/training.hpp"
#include "test_util.hpp"

namespace mpcritic {
namespace {

using testing::UniformMatrix;

// The true (A, B, K, P) is a stationary point of all three losses on
// noiseless data, so plain gradient steps leave it in place.
TEST(OfflineLosses, TruthIsAFixedPoint) {
  const LqrEnv env({.n = 4});
  const LqrSolution truth = DiscountedLqrTruth(env.problem(), 1.0);
  MpcCriticSpec spec;
  spec.stage = std::make_shared<QuadraticStageCost>(env.M(), env.R());
  auto terminal = std::make_shared<QuadraticTerminal>(
      Matrix(Eigen::LLT<Matrix>(truth.P).matrixU()), QuadraticTerminal::Form::kFactored);
  auto dynamics = std::make_shared<LinearDynamics>(env.A(), env.B());
  auto controller = std::make_shared<LinearGainController>(truth.K);
  spec.terminal = terminal;
  spec.dynamics = dynamics;
  spec.controller = controller;
  spec.gamma = 1.0;
  spec.Validate();
  const MpcCriticSpec target = spec.Clone();

  const auto data = SampleOfflineDataset(env, 256 * 200, 11);
  const double lr = 1e-3;
  for (int step = 0; step < 200; ++step) {
    Matrix s(4, 256), a(4, 256), sn(4, 256);
    RowVector r(256);
    for (Index j = 0; j < 256; ++j) {
      const Transition& t = data[step * 256 + j];
      s.col(j) = t.s;
      a.col(j) = t.a;
      sn.col(j) = t.s_next;
      r[j] = t.r;
    }
    const RowVector y = TdTarget(target, r, sn, RowVector::Zero(256), 1.0);
    Vector gp = Vector::Zero(terminal->num_params());
    Vector gk = Vector::Zero(controller->num_params());
    Vector gd = Vector::Zero(dynamics->num_params());
    CriticLossGrad(spec, s, a, y, nullptr, &gp);
    ActorLossGrad(spec, s, &gk);
    ModelLossGrad(*dynamics, s, a, sn, &gd);
    if (step == 0) {
      EXPECT_LE(gp.lpNorm<Eigen::Infinity>(), 1e-9);
      EXPECT_LE(gk.lpNorm<Eigen::Infinity>(), 1e-9);
      EXPECT_EQ(gd.lpNorm<Eigen::Infinity>(), 0.0);
    }
    terminal->params() -= lr * gp;
    controller->params() -= lr * gk;
    dynamics->params() -= lr * gd;
  }
  EXPECT_LE(ClosedLoopRmse(dynamics->A(), dynamics->B(), controller->K(), env.A(), env.B(),
                           truth.K),
            1e-6);
  EXPECT_LE(ParamRmse(terminal->P(), truth.P), 1e-6);
}

TEST(OfflineValidation, StartsAtTruthWhenAsked) {
  OfflineOptions opt;
  opt.steps = 1;
  opt.dataset = 500;
  opt.init_at_truth = true;
  const OfflineResult r = RunOfflineValidation(opt, 0);
  EXPECT_LE(r.curve.front().closed_loop, 1e-12);
  EXPECT_LE(r.curve.front().terminal, 1e-12);
}

TEST(OfflineValidation, ModelLossMovingAverageDoesNotClimb) {
  OfflineOptions opt;
  opt.steps = 3000;
  opt.dataset = 20000;
  opt.log_every = 1;
  const OfflineResult r = RunOfflineValidation(opt, 1);
  std::deque<double> window;
  double sum = 0.0, best = std::numeric_limits<double>::infinity();
  for (const auto& p : r.curve) {
    window.push_back(p.model_loss);
    sum += p.model_loss;
    if (window.size() > 100) {
      sum -= window.front();
      window.pop_front();
    }
    if (window.size() < 100) continue;
    const double avg = sum / 100.0;
    EXPECT_LE(avg, 1.1 * best) << "step " << p.step;
    best = std::min(best, avg);
  }
  EXPECT_LT(r.curve.back().model_loss, r.curve[1].model_loss);
}

TEST(OfflineValidation, SameSeedSameCurve) {
  OfflineOptions opt;
  opt.steps = 200;
  opt.dataset = 1000;
  opt.log_every = 50;
  const OfflineResult a = RunOfflineValidation(opt, 3), b = RunOfflineValidation(opt, 3);
  ASSERT_EQ(a.curve.size(), b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    EXPECT_EQ(a.curve[i].closed_loop, b.curve[i].closed_loop);
    EXPECT_EQ(a.curve[i].critic_loss, b.curve[i].critic_loss);
  }
  EXPECT_EQ(a.P, b.P);
}

TEST(OfflineValidation, RejectsBadSchedule) {
  OfflineOptions opt;
  opt.batch = 0;
  EXPECT_THROW(RunOfflineValidation(opt, 0), ConfigError);
}

TEST(TargetNetworks, PolyakIsConvexCombination) {
  Vector online = Vector::LinSpaced(5, -1.0, 3.0);
  internal::Trained t(&online, {1e-3});
  const Vector old_target = t.target;
  online.array() += 2.0;
  t.Polyak(0.005);
  EXPECT_TRUE(t.target.isApprox(0.995 * old_target + 0.005 * online, 1e-15));
}

// With the true model, the Riccati terminal cost and no exploration, the
// MPC policy keeps every episode whose unconstrained closed loop stays
// inside the box free of violations.
TEST(OnlineMpcritic, OracleComponentsDoNotViolate) {
  const LqrEnv env({.n = 4});
  const LqrSolution lqr = SolveDare(env.problem());
  QpMpcProblem prob;
  prob.A = env.A();
  prob.B = env.B();
  prob.M = env.M();
  prob.R = env.R();
  prob.P = lqr.P;
  prob.horizon = 10;
  prob.action_box = env.action_box();
  prob.state_box = env.state_box();
  const Policy mpc = [&](const Vector& s, int) {
    QpMpcProblem p = prob;
    p.s = s;
    return Vector(SolveMpc(p).first_action());
  };
  const Policy lqr_policy = [&](const Vector& s, int) { return Vector(-lqr.K * s); };
  const RolloutStats unconstrained = RolloutPolicy(env, lqr_policy, 20, 7);
  const RolloutStats stats = RolloutPolicy(env, mpc, 20, 7);
  int checked = 0;
  for (int ep = 0; ep < 20; ++ep) {
    if (unconstrained.violations[ep] != 0) continue;
    bool saturated = false;
    for (const auto& row : unconstrained.rows) {
      saturated |= row.episode == ep && (lqr.K * row.s).lpNorm<Eigen::Infinity>() > 1.0;
    }
    if (saturated) continue;
    EXPECT_EQ(stats.violations[ep], 0) << "episode " << ep;
    ++checked;
  }
  EXPECT_GT(checked, 0);
}

OnlineOptions SmallOnline() {
  OnlineOptions opt;
  opt.env.n = 2;
  opt.steps = 150;
  opt.batch = 16;
  opt.horizon = 3;
  opt.actor_hidden = {8};
  opt.critic_hidden = {16};
  opt.start_updates = 16;
  opt.buffer = 1000;
  opt.init_std = 0.1;
  opt.lr_model = 1e-2;
  opt.keep_episodes = 3;
  return opt;
}

void ExpectSameLog(const TrainLog& a, const TrainLog& b) {
  ASSERT_EQ(a.episodes.size(), b.episodes.size());
  for (std::size_t i = 0; i < a.episodes.size(); ++i) {
    EXPECT_EQ(a.episodes[i].ret, b.episodes[i].ret);
    EXPECT_EQ(a.episodes[i].violations, b.episodes[i].violations);
    EXPECT_EQ(a.episodes[i].critic_loss, b.episodes[i].critic_loss);
    EXPECT_EQ(a.episodes[i].actor_loss, b.episodes[i].actor_loss);
    EXPECT_EQ(a.episodes[i].model_loss, b.episodes[i].model_loss);
  }
}

TEST(OnlineMpcritic, ShortRunIsReproducibleAndBounded) {
  const OnlineOptions opt = SmallOnline();
  const TrainLog a = RunOnlineMpcritic(opt, 5), b = RunOnlineMpcritic(opt, 5);
  EXPECT_EQ(a.episodes.size(), 3u);
  ExpectSameLog(a, b);
  for (const auto& e : a.episodes) {
    EXPECT_GE(e.violations, 0);
    EXPECT_LE(e.violations, 50);
    EXPECT_TRUE(std::isfinite(e.critic_loss));
  }
  EXPECT_EQ(a.trajectory.size(), 150u);
}

TEST(OnlineBaseline, ActionsStayInBoxAndRunsRepeat) {
  const OnlineOptions opt = SmallOnline();
  const TrainLog a = RunOnlineBaseline(opt, 8), b = RunOnlineBaseline(opt, 8);
  ExpectSameLog(a, b);
  for (const auto& row : a.trajectory) EXPECT_LE(row.a.lpNorm<Eigen::Infinity>(), 1.0);
}

TEST(OnlineBaseline, ZeroLearningRatesFreezeThePolicy) {
  OnlineOptions opt = SmallOnline();
  opt.lr_actor = opt.lr_critic = 0.0;
  std::vector<Vector> actors;
  opt.checkpoint.every = 10;
  opt.checkpoint.save = [&](long, const ParamVector& p) { actors.push_back(p.slice("actor")); };
  RunOnlineBaseline(opt, 2);
  ASSERT_GT(actors.size(), 2u);
  for (const auto& a : actors) EXPECT_EQ(a, actors.front());
}

// ---------------------------------------------------------------------------
// Guided actor on the nonlinear task

TEST(GuidedActor, ReducesToVanillaWhenTheRolloutIsTrivial) {
  // With a model that returns its input state, a state-only stage cost, no
  // unconstrained rollout and N = 1, the guided loss is -Q(s, mu(s)) plus a
  // constant.
  testing::TestRng rng(60);
  const ReactorEnv env;
  NonlinearOptions opt;
  auto critic = std::make_shared<Mlp>(MakeQNetwork(2, 1, {16}));
  critic->InitDefault(rng);
  auto mu = std::make_shared<MlpController>(2, std::vector<Index>{8}, env.action_box());
  mu->net().InitDefault(rng);
  auto model = std::make_shared<MlpDynamics>(2, 1, std::vector<Index>{8});
  model->params().setZero();
  const Matrix s = UniformMatrix(2, 32, -0.5, 0.5, rng);

  internal::Trained t_mu(&mu->params(), {1e-3});
  t_mu.opt = Adam(mu->num_params(), {0.0});  // take the gradient, not a step
  VanillaActorStep(*critic, *mu, t_mu, s);
  const Vector vanilla = t_mu.grad;

  for (int horizon : {1, 2}) {
    opt.horizon = horizon;
    const MpcCriticSpec spec = MakeGuidedSpec(env, opt, critic, model, mu, false);
    Vector guided = Vector::Zero(mu->num_params());
    ActorLossGrad(spec, s, &guided);
    const double gap = (guided - vanilla).norm() / vanilla.norm();
    if (horizon == 1) {
      EXPECT_LE(gap, 1e-10);
    } else {
      EXPECT_GT(gap, 1e-3);
    }
  }
}

NonlinearOptions SmallNonlinear() {
  NonlinearOptions opt;
  opt.steps = 120;
  opt.batch = 16;
  opt.hidden = {8};
  opt.horizon = 3;
  opt.start_updates = 16;
  opt.buffer = 500;
  return opt;
}

TEST(Nonlinear, EveryArmRunsAndRepeats) {
  const NonlinearOptions opt = SmallNonlinear();
  for (GuidedArm arm :
       {GuidedArm::kVanilla, GuidedArm::kGuided, GuidedArm::kGuidedConstrained}) {
    const TrainLog a = RunNonlinear(opt, arm, 4), b = RunNonlinear(opt, arm, 4);
    ExpectSameLog(a, b);
    ASSERT_FALSE(a.episodes.empty());
    EXPECT_EQ(ParseArm(ArmName(arm)), arm);
  }
  EXPECT_THROW(ParseArm("sideways"), ConfigError);
}

}  // namespace
}  // namespace mpcritic
