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

// The MPC-structured Q-function. From (s, a) the model is rolled forward
// N steps under the fictitious controller and the averaged stage costs,
// terminal value and state-box penalty form the cost; its negation is the
// reward-convention Q consumed by the actor-critic losses.

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mpcritic/components.hpp"

namespace mpcritic {

inline constexpr const char* kStageId = "stage";
inline constexpr const char* kTerminalId = "terminal";
inline constexpr const char* kDynamicsId = "dynamics";
inline constexpr const char* kControllerId = "controller";

struct MpcCriticSpec {
  std::shared_ptr<StageCost> stage;
  std::shared_ptr<Terminal> terminal;
  std::shared_ptr<Dynamics> dynamics;
  std::shared_ptr<Controller> controller;
  std::optional<BoxConstraint> state_box;
  double penalty = 10.0;
  int horizon = 1;
  double gamma = 0.99;
  /// Weights step t by gamma^t inside the rollout. Off by default: the
  /// discount then only enters through the TD target.
  bool discount_rollout = false;

  Index state_dim() const { return dynamics->state_dim(); }
  Index action_dim() const { return dynamics->action_dim(); }

  void Validate() const {
    if (!stage || !terminal || !dynamics || !controller) {
      throw ConfigError("MPCritic spec is missing a component");
    }
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (!(penalty > 0.0)) throw ConfigError("penalty weight must be > 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) {
      throw ConfigError("discount must lie in (0, 1]");
    }
    if (controller->state_dim() != state_dim() ||
        controller->action_dim() != action_dim()) {
      throw ConfigError("controller and dynamics dimensions disagree");
    }
    if (state_box && state_box->dim() != state_dim()) {
      throw ConfigError("state box dimension disagrees with dynamics");
    }
  }

  Layout layout() const {
    Layout l;
    l.Append(kStageId, stage->num_params());
    l.Append(kTerminalId, terminal->num_params());
    l.Append(kDynamicsId, dynamics->num_params());
    l.Append(kControllerId, controller->num_params());
    return l;
  }

  ParamVector params() const {
    ParamVector p(layout());
    p.slice(kStageId) = stage->params();
    p.slice(kTerminalId) = terminal->params();
    p.slice(kDynamicsId) = dynamics->params();
    p.slice(kControllerId) = controller->params();
    return p;
  }

  void set_params(const ParamVector& p) {
    if (!(p.layout() == layout())) {
      throw ConfigError("parameter layout does not match the spec");
    }
    stage->params() = p.slice(kStageId);
    terminal->params() = p.slice(kTerminalId);
    dynamics->params() = p.slice(kDynamicsId);
    controller->params() = p.slice(kControllerId);
  }

  /// Deep copy: no component is shared with the original.
  MpcCriticSpec Clone() const {
    MpcCriticSpec c = *this;
    c.stage = stage->Clone();
    c.terminal = terminal->Clone();
    c.dynamics = dynamics->Clone();
    c.controller = controller->Clone();
    return c;
  }

  double StepWeight(int t) const {
    return discount_rollout ? std::pow(gamma, t) : 1.0;
  }
};

/// Batched rollout record; samples are columns.
struct RolloutTrace {
  std::vector<Matrix> states;        // x_0 .. x_N
  std::vector<Matrix> actions;       // u_0 .. u_{N-1}
  std::vector<RowVector> stage;      // l(x_t, u_t)
  std::vector<RowVector> violation;  // ||max(h(x_t), 0)||_1
  RowVector terminal;                // V(x_N)
  RowVector cost;
  std::vector<Trace> dynamics_traces;
  std::vector<Trace> controller_traces;  // entry 0 unused (u_0 = a)
  Trace terminal_trace;
};

/// Single-sample view of a rollout.
struct Rollout {
  std::vector<Vector> states;
  std::vector<Vector> actions;
  std::vector<double> stage_costs;
  std::vector<double> violations;
  double terminal = 0.0;
};

/// Destinations for parameter gradients; null entries are not computed.
struct GradSinks {
  Vector* stage = nullptr;
  Vector* terminal = nullptr;
  Vector* dynamics = nullptr;
  Vector* controller = nullptr;

  bool needs_through_time() const { return dynamics || controller; }
};

inline RowVector QCostForward(const MpcCriticSpec& spec, const Matrix& s,
                              const Matrix& a, RolloutTrace* trace = nullptr) {
  const int n_steps = spec.horizon;
  const Index batch = s.cols();
  if (s.rows() != spec.state_dim() || a.rows() != spec.action_dim() ||
      a.cols() != batch) {
    throw ConfigError("q_cost input shape mismatch");
  }
  RolloutTrace local;
  RolloutTrace& tr = trace ? *trace : local;
  tr.states.assign(1, s);
  tr.actions.clear();
  tr.stage.clear();
  tr.violation.clear();
  tr.dynamics_traces.assign(n_steps, Trace{});
  tr.controller_traces.assign(n_steps, Trace{});

  RowVector total = RowVector::Zero(batch);
  for (int t = 0; t < n_steps; ++t) {
    const Matrix& x = tr.states[t];
    tr.actions.push_back(t == 0 ? a : spec.controller->Act(x, &tr.controller_traces[t]));
    const Matrix& u = tr.actions.back();
    tr.stage.push_back(spec.stage->Cost(x, u));
    tr.violation.push_back(spec.state_box ? spec.state_box->L1(x)
                                          : RowVector(RowVector::Zero(batch)));
    total += spec.StepWeight(t) *
             (tr.stage.back() + spec.penalty * tr.violation.back());
    Matrix next = spec.dynamics->Predict(x, u, &tr.dynamics_traces[t]);
    if (!next.allFinite()) {
      throw NumericError("rollout step " + std::to_string(t + 1),
                         "non-finite state at rollout step " +
                             std::to_string(t + 1));
    }
    tr.states.push_back(std::move(next));
  }
  tr.terminal = spec.terminal->Value(tr.states.back(), spec.controller.get(),
                                     &tr.terminal_trace);
  total += spec.StepWeight(n_steps) * tr.terminal;
  tr.cost = total / static_cast<double>(n_steps);
  if (!tr.cost.allFinite()) {
    throw NumericError("rollout cost", "non-finite rollout cost");
  }
  return tr.cost;
}

/// Reverse pass for sum_b d_cost(b) * cost(b). Input gradients are written
/// when d_s / d_a are non-null; parameter gradients accumulate into sinks.
inline void QCostBackward(const MpcCriticSpec& spec, const RolloutTrace& tr,
                          const RowVector& d_cost, const GradSinks& sinks,
                          Matrix* d_s = nullptr, Matrix* d_a = nullptr) {
  const int n_steps = spec.horizon;
  const RowVector base = d_cost / static_cast<double>(n_steps);
  const bool through = d_s || d_a || sinks.needs_through_time();

  if (!through) {
    for (int t = 0; t < n_steps; ++t) {
      if (sinks.stage) {
        spec.stage->Backward(tr.states[t], tr.actions[t], spec.StepWeight(t) * base,
                             nullptr, nullptr, sinks.stage);
      }
    }
    if (sinks.terminal) {
      spec.terminal->Backward(tr.terminal_trace, spec.StepWeight(n_steps) * base,
                              nullptr, sinks.terminal, spec.controller.get(),
                              nullptr);
    }
    return;
  }

  Matrix g_x;  // gradient w.r.t. x_{t+1} while walking backwards
  spec.terminal->Backward(tr.terminal_trace, spec.StepWeight(n_steps) * base,
                          &g_x, sinks.terminal, spec.controller.get(),
                          sinks.controller);
  Matrix g_xt, g_ut;
  for (int t = n_steps - 1; t >= 0; --t) {
    const RowVector w = spec.StepWeight(t) * base;
    spec.dynamics->Backward(tr.dynamics_traces[t], g_x, &g_xt, &g_ut,
                            sinks.dynamics);
    spec.stage->Backward(tr.states[t], tr.actions[t], w, &g_xt, &g_ut,
                         sinks.stage);
    if (spec.state_box) {
      g_xt += spec.penalty * spec.state_box->L1Grad(tr.states[t]) * w.asDiagonal();
    }
    if (t >= 1) {
      g_xt += spec.controller->Backward(tr.controller_traces[t], g_ut,
                                        sinks.controller);
    } else if (d_a) {
      *d_a = g_ut;
    }
    g_x = std::move(g_xt);
  }
  if (d_s) *d_s = std::move(g_x);
}

inline Rollout ExtractRollout(const RolloutTrace& tr, Index col) {
  Rollout r;
  for (const auto& x : tr.states) r.states.push_back(x.col(col));
  for (const auto& u : tr.actions) r.actions.push_back(u.col(col));
  for (const auto& c : tr.stage) r.stage_costs.push_back(c(col));
  for (const auto& v : tr.violation) r.violations.push_back(v(col));
  r.terminal = tr.terminal(col);
  return r;
}

inline std::pair<double, Rollout> QCost(const MpcCriticSpec& spec,
                                        const Vector& s, const Vector& a) {
  RolloutTrace tr;
  const RowVector c = QCostForward(spec, Matrix(s), Matrix(a), &tr);
  return {c(0), ExtractRollout(tr, 0)};
}

inline double QReward(const MpcCriticSpec& spec, const Vector& s,
                      const Vector& a) {
  return -QCost(spec, s, a).first;
}

inline RowVector QReward(const MpcCriticSpec& spec, const Matrix& s,
                         const Matrix& a) {
  return -QCostForward(spec, s, a);
}

/// q = r + gamma * (1 - done) * q_next. `q_next` is a reward-convention
/// value computed from frozen copies; nothing here is differentiated.
inline RowVector TdTarget(const RowVector& r, const RowVector& q_next,
                          const RowVector& done, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw ConfigError("discount must lie in [0, 1]");
  }
  if (r.size() != q_next.size() || r.size() != done.size()) {
    throw ConfigError("TD target inputs differ in length");
  }
  return r.array() + gamma * (1.0 - done.array()) * q_next.array();
}

/// TD target with the bootstrap value taken from `target` at the target
/// controller's action.
inline RowVector TdTarget(const MpcCriticSpec& target, const RowVector& r,
                          const Matrix& s_next, const RowVector& done,
                          double gamma) {
  const Matrix a_next = target.controller->Act(s_next);
  return TdTarget(r, QReward(target, s_next, a_next), done, gamma);
}

// ---------------------------------------------------------------------------
// Losses on a live spec. Each returns the loss value and accumulates the
// parameter gradient into the sinks it is allowed to touch.

/// Mean squared residual between q_reward(s, a) and the targets. Only the
/// terminal (and the stage cost, when learnable) receive gradients.
inline double CriticLossGrad(const MpcCriticSpec& spec, const Matrix& s,
                             const Matrix& a, const RowVector& target,
                             Vector* stage_grad, Vector* terminal_grad) {
  if (target.size() != s.cols()) throw ConfigError("targets misaligned with batch");
  RolloutTrace tr;
  const RowVector cost = QCostForward(spec, s, a, &tr);
  const RowVector resid = -cost - target;
  const double b = static_cast<double>(s.cols());
  if (stage_grad || terminal_grad) {
    GradSinks sinks;
    sinks.stage = spec.stage->learnable() ? stage_grad : nullptr;
    sinks.terminal = terminal_grad;
    QCostBackward(spec, tr, -2.0 * resid / b, sinks);
  }
  return resid.squaredNorm() / b;
}

/// Mean q_cost(s, mu(s)); gradients flow only into the controller.
inline double ActorLossGrad(const MpcCriticSpec& spec, const Matrix& s,
                            Vector* controller_grad) {
  Trace mu_trace;
  const Matrix a = spec.controller->Act(s, &mu_trace);
  RolloutTrace tr;
  const RowVector cost = QCostForward(spec, s, a, &tr);
  const double b = static_cast<double>(s.cols());
  if (controller_grad) {
    GradSinks sinks;
    sinks.controller = controller_grad;
    Matrix d_a;
    QCostBackward(spec, tr, RowVector::Constant(s.cols(), 1.0 / b), sinks,
                  nullptr, &d_a);
    spec.controller->Backward(mu_trace, d_a, controller_grad);
  }
  return cost.sum() / b;
}

/// Mean squared one-step prediction error; gradients only into f.
inline double ModelLossGrad(const Dynamics& f, const Matrix& s, const Matrix& a,
                            const Matrix& s_next, Vector* grad) {
  if (s.cols() == 0) throw ConfigError("model loss needs a non-empty batch");
  Trace tr;
  const Matrix err = f.Predict(s, a, &tr) - s_next;
  const double b = static_cast<double>(s.cols());
  if (grad) f.Backward(tr, 2.0 * err / b, nullptr, nullptr, grad);
  return err.squaredNorm() / b;
}

// ---------------------------------------------------------------------------
// The same losses behind the flat-vector contract.

namespace internal {

inline void ScatterSinks(GradVector* grad, const Vector& stage,
                         const Vector& terminal, const Vector& dynamics,
                         const Vector& controller) {
  grad->slice(kStageId) = stage;
  grad->slice(kTerminalId) = terminal;
  grad->slice(kDynamicsId) = dynamics;
  grad->slice(kControllerId) = controller;
}

struct SinkBuffers {
  explicit SinkBuffers(const MpcCriticSpec& spec)
      : stage(Vector::Zero(spec.stage->num_params())),
        terminal(Vector::Zero(spec.terminal->num_params())),
        dynamics(Vector::Zero(spec.dynamics->num_params())),
        controller(Vector::Zero(spec.controller->num_params())) {}
  Vector stage, terminal, dynamics, controller;
};

}  // namespace internal

class CriticLoss {
 public:
  struct Batch {
    Matrix s;
    Matrix a;
    RowVector target;
  };
  explicit CriticLoss(const MpcCriticSpec& spec)
      : spec_(spec.Clone()), layout_(spec_.layout()) {}
  const Layout& layout() const { return layout_; }

  double Evaluate(const ParamVector& p, const Batch& b, GradVector* grad) const {
    MpcCriticSpec spec = spec_.Clone();
    spec.set_params(p);
    internal::SinkBuffers g(spec);
    const double v = CriticLossGrad(spec, b.s, b.a, b.target,
                                    grad ? &g.stage : nullptr,
                                    grad ? &g.terminal : nullptr);
    if (grad) internal::ScatterSinks(grad, g.stage, g.terminal, g.dynamics, g.controller);
    return v;
  }

 private:
  MpcCriticSpec spec_;
  Layout layout_;
};

class ActorLoss {
 public:
  struct Batch {
    Matrix s;
  };
  explicit ActorLoss(const MpcCriticSpec& spec)
      : spec_(spec.Clone()), layout_(spec_.layout()) {}
  const Layout& layout() const { return layout_; }

  double Evaluate(const ParamVector& p, const Batch& b, GradVector* grad) const {
    MpcCriticSpec spec = spec_.Clone();
    spec.set_params(p);
    internal::SinkBuffers g(spec);
    const double v = ActorLossGrad(spec, b.s, grad ? &g.controller : nullptr);
    if (grad) internal::ScatterSinks(grad, g.stage, g.terminal, g.dynamics, g.controller);
    return v;
  }

 private:
  MpcCriticSpec spec_;
  Layout layout_;
};

class ModelLoss {
 public:
  struct Batch {
    Matrix s;
    Matrix a;
    Matrix s_next;
  };
  explicit ModelLoss(const MpcCriticSpec& spec)
      : spec_(spec.Clone()), layout_(spec_.layout()) {}
  const Layout& layout() const { return layout_; }

  double Evaluate(const ParamVector& p, const Batch& b, GradVector* grad) const {
    MpcCriticSpec spec = spec_.Clone();
    spec.set_params(p);
    internal::SinkBuffers g(spec);
    const double v = ModelLossGrad(*spec.dynamics, b.s, b.a, b.s_next,
                                   grad ? &g.dynamics : nullptr);
    if (grad) internal::ScatterSinks(grad, g.stage, g.terminal, g.dynamics, g.controller);
    return v;
  }

 private:
  MpcCriticSpec spec_;
  Layout layout_;
};

}  // namespace mpcritic
