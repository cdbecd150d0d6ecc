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

// Training recipes:
//  * offline recovery of an LQR solution from a fixed dataset,
//  * online learning of a constrained MPC agent, and a TD3 baseline,
//  * a nonlinear task where an external critic becomes the terminal value
//    and the rollout guides the actor.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mpcritic/components.hpp"
#include "mpcritic/envs.hpp"
#include "mpcritic/lqr.hpp"
#include "mpcritic/mpc.hpp"
#include "mpcritic/mpcritic.hpp"
#include "mpcritic/replay.hpp"

namespace mpcritic {

namespace internal {

inline Matrix NormalMatrix(Index rows, Index cols, double std, Rng& rng) {
  std::normal_distribution<double> d(0.0, std);
  Matrix x(rows, cols);
  for (Index k = 0; k < x.size(); ++k) x(k) = d(rng);
  return x;
}

/// Gaussian perturbation scaled by the box half-width, optionally clipped
/// elementwise to +-clip half-widths, then projected into the box.
inline Matrix NoisyActions(const Matrix& a, const BoxConstraint& box, double std,
                           double clip, Rng& rng) {
  Matrix out = a;
  if (std > 0.0) {
    std::normal_distribution<double> d(0.0, std);
    const Vector half = box.half_width();
    for (Index j = 0; j < a.cols(); ++j) {
      for (Index i = 0; i < a.rows(); ++i) {
        double z = d(rng);
        if (clip > 0.0) z = std::clamp(z, -clip, clip);
        out(i, j) += z * half[i];
      }
    }
  }
  return out.cwiseMax(box.lower().replicate(1, a.cols()))
      .cwiseMin(box.upper().replicate(1, a.cols()));
}

inline Matrix Stack(const Matrix& top, const Matrix& bottom) {
  Matrix x(top.rows() + bottom.rows(), top.cols());
  x.topRows(top.rows()) = top;
  x.bottomRows(bottom.rows()) = bottom;
  return x;
}

inline double Seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Adam state plus a target copy for one parameter vector.
struct Trained {
  Vector* params = nullptr;
  Vector target;
  Adam opt;
  Vector grad;

  Trained() = default;
  Trained(Vector* p, Adam::Options o)
      : params(p), target(*p), opt(p->size(), o), grad(Vector::Zero(p->size())) {}

  void ZeroGrad() { grad.setZero(); }
  void Step() { opt.Step(*params, grad); }
  void Polyak(double tau) { PolyakUpdate(target, *params, tau); }
};

}  // namespace internal

// ---------------------------------------------------------------------------
// Logs

struct EpisodeLog {
  long step = 0;  // environment steps completed at the end of the episode
  int episode = 0;
  double ret = 0.0;
  int violations = 0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double model_loss = 0.0;
  double wall_time = 0.0;
};

struct TrainLog {
  std::vector<EpisodeLog> episodes;
  std::vector<TrajectoryRow> trajectory;  // the last few episodes
  long solver_not_converged = 0;
};

/// Periodic parameter snapshots: called with (update step, parameters).
struct CheckpointHook {
  long every = 0;
  std::function<void(long, const ParamVector&)> save;

  bool Due(long step) const { return every > 0 && save && step % every == 0; }
};

/// Accumulates per-update losses within one episode.
class LossMeter {
 public:
  void Add(double* sum, long* count, double v) { *sum += v, ++*count; }
  void Critic(double v) { Add(&c_, &nc_, v); }
  void Actor(double v) { Add(&a_, &na_, v); }
  void Model(double v) { Add(&m_, &nm_, v); }
  void Flush(EpisodeLog* e) {
    e->critic_loss = nc_ ? c_ / nc_ : 0.0;
    e->actor_loss = na_ ? a_ / na_ : 0.0;
    e->model_loss = nm_ ? m_ / nm_ : 0.0;
    *this = LossMeter{};
  }

 private:
  double c_ = 0, a_ = 0, m_ = 0;
  long nc_ = 0, na_ = 0, nm_ = 0;
};

// ---------------------------------------------------------------------------
// Offline LQR recovery

struct OfflineOptions {
  Index n = 4;
  long steps = 100000;
  Index dataset = 100000;
  Index batch = 256;
  double lr_critic = 1e-3;
  double lr_actor = 1e-3;
  double lr_model = 1e-3;
  bool lr_decay = true;
  double tau = 0.005;
  double gamma = 1.0;
  int horizon = 1;
  QuadraticTerminal::Form terminal_form = QuadraticTerminal::Form::kFactored;
  double init_std = 1.0;
  bool init_at_truth = false;
  long log_every = 1000;
  double divergence = 1e3;
  CheckpointHook checkpoint;
  double m_weight = 1e-3;
  double r_weight = 1.0;
};

struct OfflinePoint {
  long step = 0;
  double closed_loop = 0.0;
  double model = 0.0;
  double gain = 0.0;
  double terminal = 0.0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double model_loss = 0.0;
};

struct OfflineResult {
  std::vector<OfflinePoint> curve;
  Matrix A, B, K, P;
  LqrSolution truth;
  OfflinePoint final_point() const { return curve.back(); }
};

/// Learns (A, B), the gain K and the terminal matrix from 10^5-style
/// uniform transitions of the benchmark LQR system, using the critic,
/// actor and model losses on shared minibatches.
inline OfflineResult RunOfflineValidation(const OfflineOptions& opt,
                                          std::uint64_t seed) {
  if (opt.steps < 0 || opt.batch < 1) throw ConfigError("invalid offline schedule");
  const Index n = opt.n;
  LqrEnv env({n, opt.m_weight, opt.r_weight, 50});
  const LqrProblem truth_prob = env.problem();
  OfflineResult out;
  out.truth = DiscountedLqrTruth(truth_prob, opt.gamma);

  Rng rng(seed);
  const auto data = SampleOfflineDataset(env, opt.dataset, seed ^ 0x9e3779b97f4a7c15ULL);
  Matrix ds(n, opt.dataset), da(n, opt.dataset), dn(n, opt.dataset);
  RowVector dr(opt.dataset);
  for (Index k = 0; k < opt.dataset; ++k) {
    ds.col(k) = data[k].s;
    da.col(k) = data[k].a;
    dn.col(k) = data[k].s_next;
    dr[k] = data[k].r;
  }

  Matrix a0, b0, k0, w0;
  if (opt.init_at_truth) {
    a0 = env.A();
    b0 = env.B();
    k0 = out.truth.K;
    if (opt.terminal_form == QuadraticTerminal::Form::kFactored) {
      w0 = Eigen::LLT<Matrix>(out.truth.P).matrixU();
    } else {
      w0 = out.truth.P;
    }
  } else {
    a0 = internal::NormalMatrix(n, n, opt.init_std, rng);
    b0 = internal::NormalMatrix(n, n, opt.init_std, rng);
    k0 = internal::NormalMatrix(n, n, opt.init_std, rng);
    w0 = internal::NormalMatrix(n, n, opt.init_std, rng);
  }

  MpcCriticSpec spec;
  spec.stage = std::make_shared<QuadraticStageCost>(env.M(), env.R());
  auto terminal = std::make_shared<QuadraticTerminal>(w0, opt.terminal_form);
  auto dynamics = std::make_shared<LinearDynamics>(a0, b0);
  auto controller = std::make_shared<LinearGainController>(k0);
  spec.terminal = terminal;
  spec.dynamics = dynamics;
  spec.controller = controller;
  spec.horizon = opt.horizon;
  spec.gamma = opt.gamma;
  spec.Validate();

  const long decay = opt.lr_decay ? opt.steps : 0;
  internal::Trained t_term(&terminal->params(), {opt.lr_critic, 0.9, 0.999, 1e-8, decay});
  internal::Trained t_ctrl(&controller->params(), {opt.lr_actor, 0.9, 0.999, 1e-8, decay});
  internal::Trained t_dyn(&dynamics->params(), {opt.lr_model, 0.9, 0.999, 1e-8, decay});

  MpcCriticSpec target = spec.Clone();
  auto sync_target = [&] {
    target.terminal->params() = t_term.target;
    target.controller->params() = t_ctrl.target;
    target.dynamics->params() = t_dyn.target;
  };

  auto record = [&](long step, double lc, double la, double lm) {
    OfflinePoint p;
    p.step = step;
    p.closed_loop = ClosedLoopRmse(dynamics->A(), dynamics->B(), controller->K(),
                                   env.A(), env.B(), out.truth.K);
    Matrix ab(n, 2 * n), ab_star(n, 2 * n);
    ab << dynamics->A(), dynamics->B();
    ab_star << env.A(), env.B();
    p.model = ParamRmse(ab, ab_star);
    p.gain = ParamRmse(controller->K(), out.truth.K);
    p.terminal = ParamRmse(terminal->P(), out.truth.P);
    p.critic_loss = lc;
    p.actor_loss = la;
    p.model_loss = lm;
    if (!std::isfinite(p.closed_loop) || p.closed_loop > opt.divergence) {
      throw NumericError("offline step " + std::to_string(step),
                         "closed-loop RMSE diverged at step " + std::to_string(step));
    }
    out.curve.push_back(p);
  };
  record(0, 0.0, 0.0, 0.0);

  std::uniform_int_distribution<Index> pick(0, opt.dataset - 1);
  std::vector<Index> idx(opt.batch);
  Matrix s(n, opt.batch), a(n, opt.batch), sn(n, opt.batch);
  RowVector r(opt.batch);
  const RowVector not_terminal = RowVector::Zero(opt.batch);
  for (long step = 1; step <= opt.steps; ++step) {
    for (Index j = 0; j < opt.batch; ++j) {
      const Index k = pick(rng);
      s.col(j) = ds.col(k);
      a.col(j) = da.col(k);
      sn.col(j) = dn.col(k);
      r[j] = dr[k];
    }
    sync_target();
    const RowVector y = TdTarget(target, r, sn, not_terminal, opt.gamma);

    t_term.ZeroGrad();
    t_ctrl.ZeroGrad();
    t_dyn.ZeroGrad();
    const double lc = CriticLossGrad(spec, s, a, y, nullptr, &t_term.grad);
    const double la = ActorLossGrad(spec, s, &t_ctrl.grad);
    const double lm = ModelLossGrad(*dynamics, s, a, sn, &t_dyn.grad);
    t_term.Step();
    t_ctrl.Step();
    t_dyn.Step();
    t_term.Polyak(opt.tau);
    t_ctrl.Polyak(opt.tau);
    t_dyn.Polyak(opt.tau);

    if (step == opt.steps || (opt.log_every > 0 && step % opt.log_every == 0)) {
      record(step, lc, la, lm);
    }
    if (opt.checkpoint.Due(step)) opt.checkpoint.save(step, spec.params());
  }
  out.A = dynamics->A();
  out.B = dynamics->B();
  out.K = controller->K();
  out.P = terminal->P();
  return out;
}

// ---------------------------------------------------------------------------
// Online constrained LQR

struct OnlineOptions {
  LqrEnv::Options env;
  long steps = 100000;
  Index batch = 256;
  double gamma = 0.99;
  double tau = 0.005;
  int policy_delay = 2;
  double lr_critic = 1e-3;
  double lr_actor = 1e-3;
  double lr_model = 1e-2;
  int horizon = 10;
  double rho = 10.0;
  double rho_qp = 1e3;
  double explore = 0.1;
  double target_noise = 0.2;
  double target_clip = 0.5;
  std::vector<Index> actor_hidden{100, 100};
  std::vector<Index> critic_hidden{256};
  double init_std = 0.1;
  bool learn_stage = false;
  Index buffer = 1000000;
  long start_updates = 256;  // environment steps before the first update
  bool wall_time = false;
  int keep_episodes = 1;  // trajectories kept for export
  CheckpointHook checkpoint;
};

/// Runs `steps` environment steps. `act` picks the action for (s, t),
/// `update` runs one update block; the per-episode log is returned.
inline TrainLog RunEpisodes(const Env& env, long steps, std::uint64_t seed,
                            ReplayBuffer& buffer, long start_updates,
                            const std::function<Vector(const Vector&, int, Rng&)>& act,
                            const std::function<void(long, LossMeter&)>& update,
                            bool wall_time, int keep_episodes = 0) {
  Rng rng(seed);
  TrainLog log;
  LossMeter meter;
  const auto t0 = std::chrono::steady_clock::now();
  Vector s = env.Reset(rng);
  int t = 0, episode = 0, viol = 0;
  double ret = 0.0;
  const long total_episodes = steps / env.horizon();
  for (long step = 1; step <= steps; ++step) {
    const Vector a = act(s, t, rng);
    const StepResult st = env.Step(s, a, t, &rng);
    const bool violated = env.Violates(s);
    viol += violated ? 1 : 0;
    ret += st.r;
    if (episode >= total_episodes - keep_episodes) {
      log.trajectory.push_back({episode, t, s, env.action_box().Clip(a), st.r, violated});
    }
    buffer.Push(s, env.action_box().Clip(a), st.r, st.s_next, false);
    if (step >= start_updates) update(step, meter);
    s = st.s_next;
    ++t;
    if (st.done) {
      EpisodeLog e;
      e.step = step;
      e.episode = episode;
      e.ret = ret;
      e.violations = viol;
      meter.Flush(&e);
      if (wall_time) e.wall_time = internal::Seconds(t0);
      log.episodes.push_back(e);
      ++episode;
      t = 0;
      viol = 0;
      ret = 0.0;
      s = env.Reset(rng);
    }
  }
  return log;
}

/// MPC agent whose model, terminal value and fictitious controller are
/// learned online; actions come from the exact constrained MPC solve.
inline TrainLog RunOnlineMpcritic(const OnlineOptions& opt, std::uint64_t seed) {
  LqrEnv env(opt.env);
  const Index n = env.state_dim(), m = env.action_dim();
  Rng init_rng(seed ^ 0x5bd1e995ULL);

  auto stage = std::make_shared<QuadraticStageCost>(env.M(), env.R());
  stage->set_learnable(opt.learn_stage);
  auto term1 = std::make_shared<QuadraticTerminal>(
      internal::NormalMatrix(n, n, opt.init_std, init_rng), QuadraticTerminal::Form::kFactored);
  auto term2 = std::make_shared<QuadraticTerminal>(
      internal::NormalMatrix(n, n, opt.init_std, init_rng), QuadraticTerminal::Form::kFactored);
  auto dyn = std::make_shared<LinearDynamics>(
      internal::NormalMatrix(n, n, opt.init_std, init_rng),
      internal::NormalMatrix(n, m, opt.init_std, init_rng));
  auto mu = std::make_shared<MlpController>(n, opt.actor_hidden, env.action_box());
  mu->net().InitDefault(init_rng);

  MpcCriticSpec spec;
  spec.stage = stage;
  spec.terminal = term1;
  spec.dynamics = dyn;
  spec.controller = mu;
  spec.state_box = env.state_box();
  spec.penalty = opt.rho;
  spec.horizon = opt.horizon;
  spec.gamma = opt.gamma;
  spec.Validate();

  const Adam::Options oc{opt.lr_critic}, oa{opt.lr_actor}, om{opt.lr_model};
  internal::Trained t_stage(&stage->params(), oc);
  internal::Trained t_term1(&term1->params(), oc);
  internal::Trained t_term2(&term2->params(), oc);
  internal::Trained t_dyn(&dyn->params(), om);
  internal::Trained t_mu(&mu->params(), oa);

  MpcCriticSpec target = spec.Clone();
  auto target_term2 = term2->Clone();
  ReplayBuffer buffer(opt.buffer, n, m, seed ^ 0x2545f4914f6cdd1dULL);
  Rng noise_rng(seed ^ 0x94d049bb133111ebULL);
  TrainLog log;

  Matrix warm;  // shifted previous solution
  auto act = [&](const Vector& s, int t, Rng& rng) -> Vector {
    QpMpcProblem prob;
    prob.A = dyn->A();
    prob.B = dyn->B();
    prob.M = ProjectPsd(stage->M());
    prob.R = stage->R();
    prob.P = term1->P();
    prob.horizon = opt.horizon;
    prob.action_box = env.action_box();
    prob.state_box = env.state_box();
    prob.rho = opt.rho_qp;
    prob.s = s;
    if (t == 0 || warm.cols() != opt.horizon) warm = Matrix::Zero(m, opt.horizon);
    const MpcResult res = SolveMpc(prob, 1e-9, 1000, &warm);
    if (!res.converged) ++log.solver_not_converged;
    warm.leftCols(opt.horizon - 1) = res.actions.rightCols(opt.horizon - 1);
    warm.col(opt.horizon - 1) = res.actions.col(opt.horizon - 1);
    return internal::NoisyActions(Matrix(res.first_action()), env.action_box(),
                                  opt.explore, 0.0, rng)
        .col(0);
  };

  auto update = [&](long step, LossMeter& meter) {
    const TransitionBatch b = buffer.Sample(opt.batch);
    const double bsz = static_cast<double>(b.size());
    // Targets from the slow copies; both terminal instances share the
    // rollout, so the second cost only swaps the terminal contribution.
    target.stage->params() = t_stage.target;
    target.terminal->params() = t_term1.target;
    target.dynamics->params() = t_dyn.target;
    target.controller->params() = t_mu.target;
    target_term2->params() = t_term2.target;
    const Matrix a_next = internal::NoisyActions(
        target.controller->Act(b.s_next), env.action_box(), opt.target_noise,
        opt.target_clip, noise_rng);
    RolloutTrace ttr;
    const RowVector c1 = QCostForward(target, b.s_next, a_next, &ttr);
    const double wn = target.StepWeight(opt.horizon) / opt.horizon;
    const RowVector v2 = target_term2->Value(ttr.states.back(), nullptr, nullptr);
    const RowVector c2 = c1 + wn * (v2 - ttr.terminal);
    const RowVector y = TdTarget(b.r, -c1.cwiseMax(c2), b.terminal, opt.gamma);

    // Critic: both terminal instances (and the stage cost if learnable).
    t_stage.ZeroGrad();
    t_term1.ZeroGrad();
    t_term2.ZeroGrad();
    RolloutTrace tr;
    const RowVector q1c = QCostForward(spec, b.s, b.a, &tr);
    Trace tt2;
    const RowVector v2live = term2->Value(tr.states.back(), nullptr, &tt2);
    const RowVector q2c = q1c + wn * (v2live - tr.terminal);
    const RowVector r1 = -q1c - y, r2 = -q2c - y;
    GradSinks sinks;
    sinks.terminal = &t_term1.grad;
    if (opt.learn_stage) sinks.stage = &t_stage.grad;
    QCostBackward(spec, tr, -2.0 * r1 / bsz, sinks);
    term2->Backward(tt2, wn * (-2.0 * r2 / bsz), nullptr, &t_term2.grad, nullptr, nullptr);
    if (opt.learn_stage) {
      GradSinks s2;
      s2.stage = &t_stage.grad;
      QCostBackward(spec, tr, -2.0 * r2 / bsz, s2);
      t_stage.Step();
      // Keep the stage weights symmetric positive semidefinite.
      stage->M() = ProjectPsd(stage->M());
      stage->R() = ProjectPsd(stage->R(), 1e-6);
    }
    t_term1.Step();
    t_term2.Step();
    meter.Critic((r1.squaredNorm() + r2.squaredNorm()) / bsz);

    t_dyn.ZeroGrad();
    meter.Model(ModelLossGrad(*dyn, b.s, b.a, b.s_next, &t_dyn.grad));
    t_dyn.Step();

    if (step % opt.policy_delay == 0) {
      t_mu.ZeroGrad();
      meter.Actor(ActorLossGrad(spec, b.s, &t_mu.grad));
      t_mu.Step();
      t_stage.Polyak(opt.tau);
      t_term1.Polyak(opt.tau);
      t_term2.Polyak(opt.tau);
      t_dyn.Polyak(opt.tau);
      t_mu.Polyak(opt.tau);
    }
    if (opt.checkpoint.Due(step)) opt.checkpoint.save(step, spec.params());
  };

  TrainLog run = RunEpisodes(env, opt.steps, seed, buffer, opt.start_updates, act,
                             update, opt.wall_time, opt.keep_episodes);
  run.solver_not_converged = log.solver_not_converged;
  return run;
}

/// Concatenates named parameter vectors into one flat vector.
inline ParamVector PackParams(
    const std::vector<std::pair<std::string, const Vector*>>& parts) {
  Layout layout;
  for (const auto& [id, v] : parts) layout.Append(id, v->size());
  ParamVector p(layout);
  for (const auto& [id, v] : parts) p.slice(id) = *v;
  return p;
}

/// Reward-convention critic network Q(s, a) on stacked [s; a] inputs.
inline Mlp MakeQNetwork(Index n, Index m, const std::vector<Index>& hidden) {
  std::vector<Index> w{n + m};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(1);
  return Mlp(w);
}

/// Twin-critic TD3 pieces shared by the baseline and the nonlinear arms.
struct Td3Critics {
  std::shared_ptr<Mlp> q1, q2;
  internal::Trained t1, t2;
  Mlp q1_target, q2_target;

  Td3Critics(Index n, Index m, const std::vector<Index>& hidden, double lr, Rng& rng)
      : q1(std::make_shared<Mlp>(MakeQNetwork(n, m, hidden))),
        q2(std::make_shared<Mlp>(MakeQNetwork(n, m, hidden))) {
    q1->InitDefault(rng);
    q2->InitDefault(rng);
    t1 = internal::Trained(&q1->params(), {lr});
    t2 = internal::Trained(&q2->params(), {lr});
    q1_target = *q1;
    q2_target = *q2;
  }

  /// Min-of-targets TD target at the smoothed target action.
  RowVector Target(const TransitionBatch& b, const Matrix& a_next, double gamma) {
    q1_target.params() = t1.target;
    q2_target.params() = t2.target;
    const Matrix in = internal::Stack(b.s_next, a_next);
    const RowVector q = q1_target.Forward(in).row(0).cwiseMin(q2_target.Forward(in).row(0));
    return TdTarget(b.r, q, b.terminal, gamma);
  }

  double Update(const TransitionBatch& b, const RowVector& y) {
    const Matrix in = internal::Stack(b.s, b.a);
    const double bsz = static_cast<double>(b.size());
    double loss = 0.0;
    for (auto [net, tr] : {std::pair{q1.get(), &t1}, std::pair{q2.get(), &t2}}) {
      Trace trace;
      const RowVector r = net->Forward(in, &trace).row(0) - y;
      tr->ZeroGrad();
      net->Backward(trace, 2.0 * r / bsz, tr->grad);
      tr->Step();
      loss += r.squaredNorm() / bsz;
    }
    return loss;
  }

  void Polyak(double tau) {
    t1.Polyak(tau);
    t2.Polyak(tau);
  }
};

/// Deterministic-policy actor step: ascend Q1(s, mu(s)).
inline double VanillaActorStep(const Mlp& q1, MlpController& mu,
                               internal::Trained& t_mu, const Matrix& s) {
  Trace mt, qt;
  const Matrix a = mu.Act(s, &mt);
  const RowVector q = q1.Forward(internal::Stack(s, a), &qt).row(0);
  const double bsz = static_cast<double>(s.cols());
  const Matrix d_in = q1.BackwardInput(qt, RowVector::Constant(s.cols(), -1.0 / bsz));
  t_mu.ZeroGrad();
  mu.Backward(mt, d_in.bottomRows(a.rows()), &t_mu.grad);
  t_mu.Step();
  return -q.mean();
}

/// TD3 with a ReLU actor of the fictitious controller's class and a
/// one-hidden-layer critic.
inline TrainLog RunOnlineBaseline(const OnlineOptions& opt, std::uint64_t seed) {
  LqrEnv env(opt.env);
  const Index n = env.state_dim(), m = env.action_dim();
  Rng init_rng(seed ^ 0x5bd1e995ULL);
  MlpController mu(n, opt.actor_hidden, env.action_box());
  mu.net().InitDefault(init_rng);
  internal::Trained t_mu(&mu.params(), {opt.lr_actor});
  MlpController mu_target = mu;
  Td3Critics critics(n, m, opt.critic_hidden, opt.lr_critic, init_rng);
  ReplayBuffer buffer(opt.buffer, n, m, seed ^ 0x2545f4914f6cdd1dULL);
  Rng noise_rng(seed ^ 0x94d049bb133111ebULL);

  auto act = [&](const Vector& s, int, Rng& rng) -> Vector {
    return internal::NoisyActions(mu.Act(Matrix(s)), env.action_box(), opt.explore,
                                  0.0, rng)
        .col(0);
  };
  auto update = [&](long step, LossMeter& meter) {
    const TransitionBatch b = buffer.Sample(opt.batch);
    mu_target.params() = t_mu.target;
    const Matrix a_next = internal::NoisyActions(mu_target.Act(b.s_next), env.action_box(),
                                                 opt.target_noise, opt.target_clip, noise_rng);
    meter.Critic(critics.Update(b, critics.Target(b, a_next, opt.gamma)));
    if (step % opt.policy_delay == 0) {
      meter.Actor(VanillaActorStep(*critics.q1, mu, t_mu, b.s));
      critics.Polyak(opt.tau);
      t_mu.Polyak(opt.tau);
    }
    if (opt.checkpoint.Due(step)) {
      opt.checkpoint.save(step, PackParams({{"actor", &mu.params()},
                                            {"critic1", &critics.q1->params()},
                                            {"critic2", &critics.q2->params()}}));
    }
  };
  return RunEpisodes(env, opt.steps, seed, buffer, opt.start_updates, act, update,
                     opt.wall_time, opt.keep_episodes);
}

// ---------------------------------------------------------------------------
// Nonlinear task: learned critic as terminal value

enum class GuidedArm { kVanilla, kGuided, kGuidedConstrained };

inline const char* ArmName(GuidedArm arm) {
  switch (arm) {
    case GuidedArm::kVanilla:
      return "vanilla";
    case GuidedArm::kGuided:
      return "guided";
    case GuidedArm::kGuidedConstrained:
      return "guided_constrained";
  }
  return "?";
}

inline GuidedArm ParseArm(const std::string& s) {
  if (s == "vanilla") return GuidedArm::kVanilla;
  if (s == "guided") return GuidedArm::kGuided;
  if (s == "guided_constrained") return GuidedArm::kGuidedConstrained;
  throw ConfigError("unknown arm: " + s);
}

struct NonlinearOptions {
  ReactorEnv::Options env;
  long steps = 10000;
  Index batch = 128;
  double gamma = 0.99;
  double tau = 0.005;
  int policy_delay = 2;
  double lr_critic = 1e-3;
  double lr_actor = 1e-3;
  double lr_model = 1e-3;
  std::vector<Index> hidden{64, 64};
  int horizon = 5;
  double rho = 10.0;
  double stage_sigma2 = 0.25;
  double explore = 0.1;
  double target_noise = 0.2;
  double target_clip = 0.5;
  int model_every = 1;
  Index buffer = 1000000;
  long start_updates = 128;
  bool wall_time = false;
  int keep_episodes = 1;
  CheckpointHook checkpoint;
};

/// Builds the rollout critic used by the guided arms: learned model, the
/// wide Gaussian stage cost, the shared critic as terminal value and,
/// for the constrained arm, the state box penalty.
inline MpcCriticSpec MakeGuidedSpec(const ReactorEnv& env, const NonlinearOptions& opt,
                                    std::shared_ptr<Mlp> critic,
                                    std::shared_ptr<MlpDynamics> model,
                                    std::shared_ptr<MlpController> mu,
                                    bool constrained) {
  MpcCriticSpec spec;
  spec.stage = std::make_shared<GaussianStageCost>(env.options().goal, opt.stage_sigma2, 1,
                                                   Convention::kReward);
  spec.terminal = std::make_shared<CriticTerminal>(std::move(critic));
  spec.dynamics = std::move(model);
  spec.controller = std::move(mu);
  if (constrained) spec.state_box = env.state_box();
  spec.penalty = opt.rho;
  spec.horizon = opt.horizon;
  spec.gamma = opt.gamma;
  spec.Validate();
  return spec;
}

inline TrainLog RunNonlinear(const NonlinearOptions& opt, GuidedArm arm,
                             std::uint64_t seed) {
  ReactorEnv env(opt.env);
  const Index n = env.state_dim(), m = env.action_dim();
  Rng init_rng(seed ^ 0x5bd1e995ULL);
  auto mu = std::make_shared<MlpController>(n, opt.hidden, env.action_box());
  mu->net().InitDefault(init_rng);
  internal::Trained t_mu(&mu->params(), {opt.lr_actor});
  MlpController mu_target = *mu;
  Td3Critics critics(n, m, opt.hidden, opt.lr_critic, init_rng);
  auto model = std::make_shared<MlpDynamics>(n, m, opt.hidden);
  model->net().InitDefault(init_rng);
  internal::Trained t_model(&model->params(), {opt.lr_model});

  const bool guided = arm != GuidedArm::kVanilla;
  std::optional<MpcCriticSpec> spec;
  if (guided) {
    spec = MakeGuidedSpec(env, opt, critics.q1, model, mu,
                          arm == GuidedArm::kGuidedConstrained);
  }

  ReplayBuffer buffer(opt.buffer, n, m, seed ^ 0x2545f4914f6cdd1dULL);
  Rng noise_rng(seed ^ 0x94d049bb133111ebULL);
  auto act = [&](const Vector& s, int, Rng& rng) -> Vector {
    return internal::NoisyActions(mu->Act(Matrix(s)), env.action_box(), opt.explore, 0.0,
                                  rng)
        .col(0);
  };
  auto update = [&](long step, LossMeter& meter) {
    const TransitionBatch b = buffer.Sample(opt.batch);
    mu_target.params() = t_mu.target;
    const Matrix a_next = internal::NoisyActions(mu_target.Act(b.s_next), env.action_box(),
                                                 opt.target_noise, opt.target_clip, noise_rng);
    meter.Critic(critics.Update(b, critics.Target(b, a_next, opt.gamma)));
    if (guided && step % opt.model_every == 0) {
      t_model.ZeroGrad();
      meter.Model(ModelLossGrad(*model, b.s, b.a, b.s_next, &t_model.grad));
      t_model.Step();
    }
    if (step % opt.policy_delay == 0) {
      if (guided) {
        t_mu.ZeroGrad();
        meter.Actor(ActorLossGrad(*spec, b.s, &t_mu.grad));
        t_mu.Step();
      } else {
        meter.Actor(VanillaActorStep(*critics.q1, *mu, t_mu, b.s));
      }
      critics.Polyak(opt.tau);
      t_mu.Polyak(opt.tau);
    }
    if (opt.checkpoint.Due(step)) {
      opt.checkpoint.save(step, PackParams({{"actor", &mu->params()},
                                            {"critic1", &critics.q1->params()},
                                            {"critic2", &critics.q2->params()},
                                            {"dynamics", &model->params()}}));
    }
  };
  return RunEpisodes(env, opt.steps, seed, buffer, opt.start_updates, act, update,
                     opt.wall_time, opt.keep_episodes);
}

// ---------------------------------------------------------------------------
// Summaries

struct SummaryRow {
  std::string agent;
  double reward_mean = 0.0;
  double reward_sd = 0.0;
  int viol_min = 0;
  int viol_max = 0;
};

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2.
inline double SampleSd(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

/// Statistics over the last `last` episodes of every run.
inline SummaryRow SummarizeFinal(const std::string& agent,
                                 const std::vector<TrainLog>& runs, int last) {
  std::vector<double> rets;
  SummaryRow row;
  row.agent = agent;
  bool any = false;
  for (const auto& run : runs) {
    const int total = static_cast<int>(run.episodes.size());
    for (int i = std::max(0, total - last); i < total; ++i) {
      const auto& e = run.episodes[i];
      rets.push_back(e.ret);
      row.viol_min = any ? std::min(row.viol_min, e.violations) : e.violations;
      row.viol_max = any ? std::max(row.viol_max, e.violations) : e.violations;
      any = true;
    }
  }
  for (double r : rets) row.reward_mean += r;
  if (!rets.empty()) row.reward_mean /= static_cast<double>(rets.size());
  row.reward_sd = SampleSd(rets);
  return row;
}

/// Moving average of episode returns over a trailing window.
inline std::vector<double> SmoothedReturns(const TrainLog& log, int window) {
  std::vector<double> out;
  double acc = 0.0;
  for (std::size_t i = 0; i < log.episodes.size(); ++i) {
    acc += log.episodes[i].ret;
    if (i >= static_cast<std::size_t>(window)) acc -= log.episodes[i - window].ret;
    const double cnt = static_cast<double>(std::min<std::size_t>(i + 1, window));
    out.push_back(acc / cnt);
  }
  return out;
}

/// First episode (1-based) at which the smoothed return reaches
/// `threshold`; episodes + 1 when it never does.
inline int EpisodesToReach(const TrainLog& log, double threshold, int window) {
  const auto sm = SmoothedReturns(log, window);
  for (std::size_t i = 0; i < sm.size(); ++i) {
    if (sm[i] >= threshold) return static_cast<int>(i) + 1;
  }
  return static_cast<int>(sm.size()) + 1;
}

inline double Median(std::vector<double> x) {
  if (x.empty()) return 0.0;
  std::sort(x.begin(), x.end());
  const std::size_t k = x.size() / 2;
  return x.size() % 2 ? x[k] : 0.5 * (x[k - 1] + x[k]);
}

}  // namespace mpcritic
