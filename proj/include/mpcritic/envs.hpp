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

// Benchmark environments. Environments are stateless value types: the
// caller owns the state and the step counter, so independent rollouts can
// share one instance.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "mpcritic/components.hpp"
#include "mpcritic/lqr.hpp"

namespace mpcritic {

using Rng = std::mt19937_64;

struct Transition {
  Vector s;
  Vector a;
  double r = 0.0;
  Vector s_next;
  bool done = false;
};

struct StepResult {
  Vector s_next;
  double r = 0.0;
  bool done = false;
  bool clipped = false;  // the requested action left the action box
};

class Env {
 public:
  virtual ~Env() = default;
  virtual Index state_dim() const = 0;
  virtual Index action_dim() const = 0;
  virtual const BoxConstraint& state_box() const = 0;
  virtual const BoxConstraint& action_box() const = 0;
  virtual int horizon() const = 0;
  virtual Vector Reset(Rng& rng) const = 0;
  /// Deterministic transition map.
  virtual Vector Transit(const Vector& s, const Vector& a) const = 0;
  virtual double Reward(const Vector& s, const Vector& a) const = 0;

  /// Additive Gaussian process noise on the next state (0 disables).
  double process_noise = 0.0;

  /// Applies action `a` at step index t. Out-of-box actions are clipped.
  StepResult Step(const Vector& s, const Vector& a, int t,
                  Rng* noise_rng = nullptr) const {
    StepResult out;
    const Vector a_in = action_box().Clip(a);
    out.clipped = !(a_in.array() == a.array()).all();
    out.r = Reward(s, a_in);
    out.s_next = Transit(s, a_in);
    if (process_noise > 0.0 && noise_rng) {
      std::normal_distribution<double> noise(0.0, process_noise);
      for (Index i = 0; i < out.s_next.size(); ++i) out.s_next[i] += noise(*noise_rng);
    }
    out.done = t + 1 >= horizon();
    return out;
  }

  bool Violates(const Vector& s) const { return !state_box().Contains(s); }
};

/// Linear system with the tridiagonal unstable benchmark matrix, B = I and
/// reward -s'Ms - a'Ra.
class LqrEnv final : public Env {
 public:
  struct Options {
    Index n = 4;
    double m_weight = 1e-3;
    double r_weight = 1.0;
    int horizon = 50;
  };

  explicit LqrEnv(Options opt)
      : opt_(opt),
        A_(LaplacianMatrix(opt.n)),
        B_(Matrix::Identity(opt.n, opt.n)),
        M_(opt.m_weight * Matrix::Identity(opt.n, opt.n)),
        R_(opt.r_weight * Matrix::Identity(opt.n, opt.n)),
        state_box_(BoxConstraint::Symmetric(opt.n, 1.0)),
        action_box_(BoxConstraint::Symmetric(opt.n, 1.0)) {
    if (opt.n < 1) throw ConfigError("environment dimension must be >= 1");
    if (opt.horizon < 1) throw ConfigError("episode length must be >= 1");
  }
  LqrEnv() : LqrEnv(Options{}) {}

  Index state_dim() const override { return opt_.n; }
  Index action_dim() const override { return opt_.n; }
  const BoxConstraint& state_box() const override { return state_box_; }
  const BoxConstraint& action_box() const override { return action_box_; }
  int horizon() const override { return opt_.horizon; }

  const Matrix& A() const { return A_; }
  const Matrix& B() const { return B_; }
  const Matrix& M() const { return M_; }
  const Matrix& R() const { return R_; }
  LqrProblem problem() const { return {A_, B_, M_, R_}; }

  Vector Reset(Rng& rng) const override {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vector s(opt_.n);
    for (Index i = 0; i < opt_.n; ++i) s[i] = u(rng);
    return s;
  }

  Vector Transit(const Vector& s, const Vector& a) const override {
    return A_ * s + B_ * a;
  }

  double Reward(const Vector& s, const Vector& a) const override {
    return -s.dot(M_ * s) - a.dot(R_ * a);
  }

 private:
  Options opt_;
  Matrix A_, B_, M_, R_;
  BoxConstraint state_box_;
  BoxConstraint action_box_;
};

/// Two-state exothermic reactor surrogate. State (T, c): scaled temperature
/// and product concentration; action: scaled heat input in [-1, 1].
///
///   k(T) = k0 exp(beta T)
///   T'   = T + dt (-cool T + a + heat k(T) (1 - c))
///   c'   = c + dt (k(T) (1 - c) - flow c)
///
/// The reward is a narrow Gaussian around the concentration goal; the
/// temperature has an upper safety limit expressed as the state box.
class ReactorEnv final : public Env {
 public:
  struct Options {
    double dt = 0.1;
    double k0 = 0.25;
    double beta = 2.5;
    double cool = 0.5;
    double heat = 0.2;
    double flow = 1.0;
    double goal = 0.6;
    double sigma2 = 0.0025;
    double t_max = 0.8;
    double init_spread = 0.05;
    int horizon = 50;
  };

  explicit ReactorEnv(Options opt)
      : opt_(opt),
        state_box_(Vector((Vector(2) << -1.0, -1.0).finished()),
                   Vector((Vector(2) << opt.t_max, 2.0).finished())),
        action_box_(BoxConstraint::Symmetric(1, 1.0)) {
    if (!(opt.sigma2 > 0.0)) throw ConfigError("reward width must be > 0");
    if (opt.horizon < 1) throw ConfigError("episode length must be >= 1");
  }
  ReactorEnv() : ReactorEnv(Options{}) {}

  const Options& options() const { return opt_; }
  Index state_dim() const override { return 2; }
  Index action_dim() const override { return 1; }
  const BoxConstraint& state_box() const override { return state_box_; }
  const BoxConstraint& action_box() const override { return action_box_; }
  int horizon() const override { return opt_.horizon; }

  Vector Reset(Rng& rng) const override {
    std::uniform_real_distribution<double> u(-opt_.init_spread, opt_.init_spread);
    Vector s(2);
    s[0] = u(rng);
    s[1] = 0.2 + u(rng);
    return s;
  }

  Vector Transit(const Vector& s, const Vector& a) const override {
    const double T = s[0], c = s[1];
    const double k = opt_.k0 * std::exp(opt_.beta * T);
    Vector n(2);
    n[0] = T + opt_.dt * (-opt_.cool * T + a[0] + opt_.heat * k * (1.0 - c));
    n[1] = c + opt_.dt * (k * (1.0 - c) - opt_.flow * c);
    return n;
  }

  double Reward(const Vector& s, const Vector&) const override {
    const double d = opt_.goal - s[1];
    return std::exp(-d * d / (2.0 * opt_.sigma2));
  }

 private:
  Options opt_;
  BoxConstraint state_box_;
  BoxConstraint action_box_;
};

// ---------------------------------------------------------------------------
// Rollouts and datasets

/// Maps (state, step index) to an action.
using Policy = std::function<Vector(const Vector&, int)>;

struct TrajectoryRow {
  int episode = 0;
  int t = 0;
  Vector s;
  Vector a;
  double r = 0.0;
  bool violation = false;
};

struct RolloutStats {
  std::vector<double> returns;
  std::vector<int> violations;
  std::vector<TrajectoryRow> rows;
};

/// Runs full episodes. A step counts as a violation when the state it
/// starts from lies strictly outside the state box.
inline RolloutStats RolloutPolicy(const Env& env, const Policy& policy,
                                  int episodes, std::uint64_t seed) {
  Rng rng(seed);
  RolloutStats out;
  for (int ep = 0; ep < episodes; ++ep) {
    Vector s = env.Reset(rng);
    double ret = 0.0;
    int viol = 0;
    for (int t = 0; t < env.horizon(); ++t) {
      const Vector a = env.action_box().Clip(policy(s, t));
      const StepResult st = env.Step(s, a, t, &rng);
      const bool v = env.Violates(s);
      viol += v ? 1 : 0;
      ret += st.r;
      out.rows.push_back({ep, t, s, a, st.r, v});
      s = st.s_next;
    }
    out.returns.push_back(ret);
    out.violations.push_back(viol);
  }
  return out;
}

/// Uniform draws of (s, a) over the state and action boxes, labelled by
/// the true transition map.
inline std::vector<Transition> SampleOfflineDataset(const Env& env, Index count,
                                                    std::uint64_t seed) {
  if (count < 1) throw ConfigError("dataset size must be >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&](const BoxConstraint& box) {
    Vector v(box.dim());
    for (Index i = 0; i < box.dim(); ++i) {
      v[i] = box.lower()[i] + unit(rng) * (box.upper()[i] - box.lower()[i]);
    }
    return v;
  };
  std::vector<Transition> data;
  data.reserve(count);
  for (Index k = 0; k < count; ++k) {
    Transition tr;
    tr.s = draw(env.state_box());
    tr.a = draw(env.action_box());
    tr.r = env.Reward(tr.s, tr.a);
    tr.s_next = env.Transit(tr.s, tr.a);
    data.push_back(std::move(tr));
  }
  return data;
}

}  // namespace mpcritic
