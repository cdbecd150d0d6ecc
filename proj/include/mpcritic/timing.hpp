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

// Wall-clock comparison of the amortized controller against per-sample
// MPC solves. Forward: batched controller evaluation vs one solve per
// state. Backward: parameter gradient of the summed controller outputs vs
// the parametric sensitivity of every solution through its KKT system.

#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "mpcritic/components.hpp"
#include "mpcritic/envs.hpp"
#include "mpcritic/lqr.hpp"
#include "mpcritic/mpc.hpp"

namespace mpcritic {

enum class TimedPolicy { kController, kMpc };

struct TimingSample {
  double forward_s = 0.0;
  double backward_s = 0.0;
  long iterations = 0;  // total solver iterations (MPC only)
};

struct TimingRecord {
  Index n = 0;
  Index m = 0;
  Index batch = 0;
  std::string policy;
  std::string direction;
  double mean_s = 0.0;
  double std_s = 0.0;
  int seeds = 0;
};

namespace internal {

template <class F>
double TimeIt(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace internal

/// Mean over `repeats` of the batched forward and backward passes.
inline TimingSample TimeController(const MlpController& mu, const Matrix& states,
                                   int repeats) {
  TimingSample out;
  Vector grad = Vector::Zero(mu.num_params());
  Matrix ones;
  for (int r = 0; r < repeats; ++r) {
    Trace trace;
    Matrix u;
    out.forward_s += internal::TimeIt([&] { u = mu.Act(states, &trace); });
    ones = Matrix::Ones(u.rows(), u.cols());
    out.backward_s += internal::TimeIt([&] {
      grad.setZero();
      mu.Backward(trace, ones, &grad);
    });
  }
  out.forward_s /= repeats;
  out.backward_s /= repeats;
  return out;
}

/// Sum over states of one MPC solve (forward) and one full KKT sensitivity
/// (backward). When `max_samples` < batch only the first `max_samples`
/// states are timed and the sums are scaled up to the full batch.
inline TimingSample TimeMpc(const QpMpcProblem& base, const Matrix& states,
                            Index max_samples) {
  TimingSample out;
  const Index batch = states.cols();
  const Index k = max_samples > 0 ? std::min(max_samples, batch) : batch;
  for (Index j = 0; j < k; ++j) {
    QpMpcProblem prob = base;
    prob.s = states.col(j);
    MpcResult res;
    MpcActiveSet active;
    out.forward_s += internal::TimeIt([&] { res = SolveMpc(prob, 1e-9, 1000, nullptr, &active); });
    out.iterations += res.iterations;
    out.backward_s += internal::TimeIt([&] {
      const MpcSensitivity sens = MpcKktSensitivity(prob, res, active);
      if (!sens.jacobian.allFinite()) throw NumericError("mpc", "non-finite sensitivity");
    });
  }
  const double scale = static_cast<double>(batch) / static_cast<double>(k);
  out.forward_s *= scale;
  out.backward_s *= scale;
  return out;
}

/// Dispatches on the policy kind; `repeats` applies to the controller.
inline TimingSample TimeForwardBackward(TimedPolicy policy, const MlpController& mu,
                                        const QpMpcProblem& mpc, const Matrix& states,
                                        int repeats, Index max_samples = 0) {
  if (states.cols() < 1) throw ConfigError("timing needs at least one state");
  return policy == TimedPolicy::kController ? TimeController(mu, states, repeats)
                                            : TimeMpc(mpc, states, max_samples);
}

struct TimingOptions {
  std::vector<Index> sizes{4, 8, 16};
  Index batch = 256;
  int seeds = 10;
  std::vector<Index> hidden{100, 100};
  int horizon = 1;
  int repeats = 5;
  Index mpc_samples = 256;
  double rho_qp = 1e3;
};

/// Benchmark problem for size n: the unstable tridiagonal system with its
/// Riccati terminal cost and unit boxes.
inline QpMpcProblem TimingProblem(Index n, int horizon, double rho_qp) {
  LqrEnv env({n, 1e-3, 1.0, 50});
  QpMpcProblem prob;
  prob.A = env.A();
  prob.B = env.B();
  prob.M = env.M();
  prob.R = env.R();
  prob.P = SolveDare(env.problem()).P;
  prob.horizon = horizon;
  prob.action_box = env.action_box();
  prob.state_box = env.state_box();
  prob.rho = rho_qp;
  prob.s = Vector::Zero(n);
  return prob;
}

/// One record per (size, policy, direction) with mean and sample SD over
/// seeds. `on_size` (optional) observes the raw per-seed samples.
inline std::vector<TimingRecord> RunTimingBench(
    const TimingOptions& opt,
    const std::function<void(Index, const std::vector<TimingSample>&,
                             const std::vector<TimingSample>&)>& on_size = {}) {
  std::vector<TimingRecord> out;
  for (Index n : opt.sizes) {
    const QpMpcProblem prob = TimingProblem(n, opt.horizon, opt.rho_qp);
    std::vector<TimingSample> mu_s, mpc_s;
    for (int seed = 0; seed < opt.seeds; ++seed) {
      Rng rng(static_cast<std::uint64_t>(seed) * 1000003ULL + static_cast<std::uint64_t>(n));
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      Matrix states(n, opt.batch);
      for (Index k = 0; k < states.size(); ++k) states(k) = u(rng);
      MlpController mu(n, opt.hidden, prob.action_box);
      mu.net().InitDefault(rng);
      mu_s.push_back(TimeForwardBackward(TimedPolicy::kController, mu, prob, states, opt.repeats));
      mpc_s.push_back(
          TimeForwardBackward(TimedPolicy::kMpc, mu, prob, states, 1, opt.mpc_samples));
    }
    if (on_size) on_size(n, mu_s, mpc_s);
    auto add = [&](const char* policy, const std::vector<TimingSample>& xs, bool fwd) {
      std::vector<double> v;
      for (const auto& x : xs) v.push_back(fwd ? x.forward_s : x.backward_s);
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
      out.push_back({n, n, opt.batch, policy, fwd ? "forward" : "backward", mean, sd, opt.seeds});
    };
    add("mu", mu_s, true);
    add("mu", mu_s, false);
    add("mpc", mpc_s, true);
    add("mpc", mpc_s, false);
  }
  return out;
}

}  // namespace mpcritic
