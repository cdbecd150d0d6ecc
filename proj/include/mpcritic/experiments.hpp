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

// The four experiments behind the command-line runner. Each reads a
// Config, writes its CSV artifacts (with metadata sidecars) into an output
// directory and returns the in-memory results for programmatic checks.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mpcritic/checkpoint.hpp"
#include "mpcritic/config.hpp"
#include "mpcritic/csv.hpp"
#include "mpcritic/timing.hpp"
#include "mpcritic/training.hpp"

namespace mpcritic {

/// Optional progress sink, e.g. for a command-line logger.
using ProgressFn = std::function<void(const std::string&)>;

inline std::vector<std::uint64_t> SeedsFrom(const Config& c) {
  std::vector<std::uint64_t> out;
  for (long s : c.IntList("seeds")) {
    if (s < 0) throw ConfigError("seeds must be non-negative");
    out.push_back(static_cast<std::uint64_t>(s));
  }
  if (out.empty()) throw ConfigError("seed list is empty");
  return out;
}

inline std::filesystem::path PrepareOutDir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
  return dir;
}

namespace internal {

inline double Positive(const Config& c, const std::string& key) {
  const double v = c.Double(key);
  if (!(v > 0.0)) throw ConfigError("config key " + key + " must be > 0");
  return v;
}

inline double Unit(const Config& c, const std::string& key) {
  const double v = c.Double(key);
  if (!(v > 0.0 && v <= 1.0)) throw ConfigError("config key " + key + " must lie in (0, 1]");
  return v;
}

inline long NonNegative(const Config& c, const std::string& key) {
  const long v = c.Int(key);
  if (v < 0) throw ConfigError("config key " + key + " must be >= 0");
  return v;
}

inline long AtLeastOne(const Config& c, const std::string& key) {
  const long v = c.Int(key);
  if (v < 1) throw ConfigError("config key " + key + " must be >= 1");
  return v;
}

inline CheckpointHook MakeCheckpointHook(const Config& c, const std::filesystem::path& dir,
                                         const std::string& stem) {
  CheckpointHook hook;
  hook.every = NonNegative(c, "checkpoint.every");
  if (hook.every > 0) {
    hook.save = [dir, stem](long step, const ParamVector& p) {
      SaveCheckpoint((dir / (stem + "_step" + std::to_string(step) + ".ckpt")).string(), p);
    };
  }
  return hook;
}

}  // namespace internal

// ---------------------------------------------------------------------------
// Options from config

inline OfflineOptions OfflineFromConfig(const Config& c) {
  OfflineOptions o;
  o.steps = internal::NonNegative(c, "validate.steps");
  o.dataset = internal::AtLeastOne(c, "validate.dataset");
  o.batch = internal::AtLeastOne(c, "validate.batch");
  o.lr_critic = internal::Positive(c, "validate.lr_critic");
  o.lr_actor = internal::Positive(c, "validate.lr_actor");
  o.lr_model = internal::Positive(c, "validate.lr_model");
  o.lr_decay = c.Bool("validate.lr_decay");
  o.tau = internal::Unit(c, "validate.tau");
  o.gamma = internal::Unit(c, "validate.gamma");
  o.horizon = static_cast<int>(internal::AtLeastOne(c, "validate.horizon"));
  const std::string form = c.Str("validate.terminal_form");
  if (form == "factored") {
    o.terminal_form = QuadraticTerminal::Form::kFactored;
  } else if (form == "symmetric") {
    o.terminal_form = QuadraticTerminal::Form::kSymmetric;
  } else {
    throw ConfigError("validate.terminal_form must be symmetric or factored");
  }
  o.init_std = internal::Positive(c, "validate.init_std");
  o.log_every = internal::NonNegative(c, "validate.log_every");
  o.m_weight = c.Double("env.m_weight");
  o.r_weight = internal::Positive(c, "env.r_weight");
  return o;
}

inline LqrEnv::Options LqrEnvFromConfig(const Config& c) {
  LqrEnv::Options e;
  e.n = internal::AtLeastOne(c, "env.n");
  e.m_weight = c.Double("env.m_weight");
  e.r_weight = internal::Positive(c, "env.r_weight");
  e.horizon = static_cast<int>(internal::AtLeastOne(c, "env.horizon"));
  if (e.m_weight < 0.0) throw ConfigError("env.m_weight must be >= 0");
  return e;
}

inline OnlineOptions OnlineFromConfig(const Config& c) {
  OnlineOptions o;
  o.env = LqrEnvFromConfig(c);
  o.steps = internal::NonNegative(c, "online.steps");
  o.batch = internal::AtLeastOne(c, "online.batch");
  o.gamma = internal::Unit(c, "online.gamma");
  o.tau = internal::Unit(c, "online.tau");
  o.policy_delay = static_cast<int>(internal::AtLeastOne(c, "online.policy_delay"));
  o.lr_critic = internal::Positive(c, "online.lr_critic");
  o.lr_actor = internal::Positive(c, "online.lr_actor");
  o.lr_model = internal::Positive(c, "online.lr_model");
  o.horizon = static_cast<int>(internal::AtLeastOne(c, "online.horizon"));
  o.rho = internal::Positive(c, "online.rho");
  o.rho_qp = internal::Positive(c, "online.rho_qp");
  o.explore = c.Double("online.explore");
  o.target_noise = c.Double("online.target_noise");
  o.target_clip = c.Double("online.target_clip");
  o.actor_hidden = c.IndexList("online.actor_hidden");
  o.critic_hidden = c.IndexList("online.critic_hidden");
  o.init_std = internal::Positive(c, "online.init_std");
  o.learn_stage = c.Bool("online.learn_stage");
  o.buffer = internal::AtLeastOne(c, "online.buffer");
  o.start_updates = internal::NonNegative(c, "online.start_updates");
  o.wall_time = c.Bool("log.wall_time");
  if (o.explore < 0.0 || o.target_noise < 0.0 || o.target_clip < 0.0) {
    throw ConfigError("noise scales must be >= 0");
  }
  return o;
}

inline NonlinearOptions NonlinearFromConfig(const Config& c) {
  NonlinearOptions o;
  auto& e = o.env;
  e.dt = internal::Positive(c, "reactor.dt");
  e.k0 = internal::Positive(c, "reactor.k0");
  e.beta = c.Double("reactor.beta");
  e.cool = c.Double("reactor.cool");
  e.heat = c.Double("reactor.heat");
  e.flow = c.Double("reactor.flow");
  e.goal = c.Double("reactor.goal");
  e.sigma2 = internal::Positive(c, "reactor.sigma2");
  e.t_max = c.Double("reactor.t_max");
  e.init_spread = c.Double("reactor.init_spread");
  e.horizon = static_cast<int>(internal::AtLeastOne(c, "reactor.horizon"));
  o.steps = internal::NonNegative(c, "nonlinear.steps");
  o.batch = internal::AtLeastOne(c, "nonlinear.batch");
  o.gamma = internal::Unit(c, "nonlinear.gamma");
  o.tau = internal::Unit(c, "nonlinear.tau");
  o.policy_delay = static_cast<int>(internal::AtLeastOne(c, "nonlinear.policy_delay"));
  o.lr_critic = internal::Positive(c, "nonlinear.lr_critic");
  o.lr_actor = internal::Positive(c, "nonlinear.lr_actor");
  o.lr_model = internal::Positive(c, "nonlinear.lr_model");
  o.hidden = c.IndexList("nonlinear.hidden");
  o.horizon = static_cast<int>(internal::AtLeastOne(c, "nonlinear.horizon"));
  o.rho = internal::Positive(c, "nonlinear.rho");
  o.stage_sigma2 = internal::Positive(c, "nonlinear.stage_sigma2");
  o.explore = c.Double("nonlinear.explore");
  o.target_noise = c.Double("nonlinear.target_noise");
  o.target_clip = c.Double("nonlinear.target_clip");
  o.model_every = static_cast<int>(internal::AtLeastOne(c, "nonlinear.model_every"));
  o.buffer = internal::AtLeastOne(c, "nonlinear.buffer");
  o.start_updates = internal::NonNegative(c, "nonlinear.start_updates");
  o.wall_time = c.Bool("log.wall_time");
  return o;
}

inline TimingOptions TimingFromConfig(const Config& c) {
  TimingOptions o;
  o.sizes = c.IndexList("timing.sizes");
  o.batch = internal::AtLeastOne(c, "timing.batch");
  o.seeds = static_cast<int>(internal::AtLeastOne(c, "timing.seeds"));
  o.hidden = c.IndexList("timing.hidden");
  o.horizon = static_cast<int>(internal::AtLeastOne(c, "timing.horizon"));
  o.repeats = static_cast<int>(internal::AtLeastOne(c, "timing.repeats"));
  o.mpc_samples = internal::NonNegative(c, "timing.mpc_samples");
  o.rho_qp = internal::Positive(c, "timing.rho_qp");
  return o;
}

// ---------------------------------------------------------------------------
// validate-lqr

struct ValidateSizeSummary {
  Index n = 0;
  int seeds = 0;
  double closed_loop_mean = 0.0, closed_loop_2sd = 0.0;
  double model_mean = 0.0, model_2sd = 0.0;
  double gain_mean = 0.0;
  double terminal_mean = 0.0, terminal_2sd = 0.0;
  double terminal_bias = 0.0;  // mean signed entry error of P
};

inline std::vector<ValidateSizeSummary> CmdValidateLqr(const Config& c, const std::string& out,
                                                       const ProgressFn& progress = {}) {
  const auto dir = PrepareOutDir(out);
  OfflineOptions base = OfflineFromConfig(c);
  const auto seeds = SeedsFrom(c);
  CsvWriter curves((dir / "validate_curves.csv").string(),
                   {"n", "seed", "step", "rmse_closed_loop", "rmse_model", "rmse_gain",
                    "rmse_terminal", "critic_loss", "actor_loss", "model_loss"});
  CsvWriter summary((dir / "validate_summary.csv").string(),
                    {"n", "seeds", "closed_loop_mean", "closed_loop_2sd", "model_mean",
                     "model_2sd", "gain_mean", "terminal_mean", "terminal_2sd",
                     "terminal_bias"});
  std::vector<ValidateSizeSummary> result;
  for (Index n : c.IndexList("validate.sizes")) {
    if (n < 1) throw ConfigError("validate.sizes entries must be >= 1");
    std::vector<double> cl, md, gn, tm, bias;
    for (auto seed : seeds) {
      OfflineOptions o = base;
      o.n = n;
      o.checkpoint = internal::MakeCheckpointHook(
          c, dir, "validate_n" + std::to_string(n) + "_seed" + std::to_string(seed));
      const OfflineResult r = RunOfflineValidation(o, seed);
      for (const auto& p : r.curve) {
        curves.Row({static_cast<long>(n), static_cast<long>(seed), p.step, p.closed_loop,
                    p.model, p.gain, p.terminal, p.critic_loss, p.actor_loss, p.model_loss});
      }
      const auto f = r.final_point();
      cl.push_back(f.closed_loop);
      md.push_back(f.model);
      gn.push_back(f.gain);
      tm.push_back(f.terminal);
      bias.push_back((r.P - r.truth.P).mean());
      if (progress) {
        progress("validate n=" + std::to_string(n) + " seed=" + std::to_string(seed) +
                 " closed-loop RMSE " + FormatDouble(f.closed_loop));
      }
    }
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    ValidateSizeSummary s;
    s.n = n;
    s.seeds = static_cast<int>(seeds.size());
    s.closed_loop_mean = mean(cl);
    s.closed_loop_2sd = 2.0 * SampleSd(cl);
    s.model_mean = mean(md);
    s.model_2sd = 2.0 * SampleSd(md);
    s.gain_mean = mean(gn);
    s.terminal_mean = mean(tm);
    s.terminal_2sd = 2.0 * SampleSd(tm);
    s.terminal_bias = mean(bias);
    summary.Row({static_cast<long>(n), static_cast<long>(s.seeds), s.closed_loop_mean,
                 s.closed_loop_2sd, s.model_mean, s.model_2sd, s.gain_mean, s.terminal_mean,
                 s.terminal_2sd, s.terminal_bias});
    result.push_back(s);
  }
  curves.Flush();
  summary.Flush();
  WriteMeta(curves.path(), c.Hash(), "validate-lqr");
  WriteMeta(summary.path(), c.Hash(), "validate-lqr");
  return result;
}

// ---------------------------------------------------------------------------
// bench-timing

inline std::vector<TimingRecord> CmdBenchTiming(const Config& c, const std::string& out,
                                                const ProgressFn& progress = {}) {
  const auto dir = PrepareOutDir(out);
  const TimingOptions o = TimingFromConfig(c);
  const auto records = RunTimingBench(
      o, [&](Index n, const std::vector<TimingSample>&, const std::vector<TimingSample>&) {
        if (progress) progress("timed n=m=" + std::to_string(n));
      });
  CsvWriter w((dir / "timing.csv").string(),
              {"n", "m", "batch", "policy", "direction", "mean_s", "std_s", "seeds"});
  for (const auto& r : records) {
    w.Row({static_cast<long>(r.n), static_cast<long>(r.m), static_cast<long>(r.batch),
           r.policy, r.direction, r.mean_s, r.std_s, static_cast<long>(r.seeds)});
  }
  w.Flush();
  WriteMeta(w.path(), c.Hash(), "bench-timing");
  return records;
}

// ---------------------------------------------------------------------------
// train-online / train-nonlinear

inline std::vector<std::string> TrainLogHeader() {
  return {"agent",       "seed",       "step",       "episode",          "return",
          "violations",  "critic_loss", "actor_loss", "model_loss", "rmse_closed_loop",
          "wall_time"};
}

inline void WriteTrainLog(CsvWriter& w, const std::string& agent, std::uint64_t seed,
                          const TrainLog& log, bool wall_time) {
  for (const auto& e : log.episodes) {
    w.Row({agent, static_cast<long>(seed), e.step, static_cast<long>(e.episode), e.ret,
           static_cast<long>(e.violations), e.critic_loss, e.actor_loss, e.model_loss,
           std::string{}, wall_time ? CsvCell{e.wall_time} : CsvCell{std::string{}}});
  }
}

inline std::vector<std::string> SummaryHeader() {
  return {"agent", "reward_mean", "reward_sd", "viol_min", "viol_max"};
}

inline void WriteSummaryRow(CsvWriter& w, const SummaryRow& r) {
  w.Row({r.agent, r.reward_mean, r.reward_sd, static_cast<long>(r.viol_min),
         static_cast<long>(r.viol_max)});
}

struct OnlineOutcome {
  std::map<std::string, std::vector<TrainLog>> logs;  // agent -> per-seed logs
  std::vector<SummaryRow> summary;
};

inline OnlineOutcome CmdTrainOnline(const Config& c, const std::string& out,
                                    const ProgressFn& progress = {}) {
  const auto dir = PrepareOutDir(out);
  const OnlineOptions base = OnlineFromConfig(c);
  const auto seeds = SeedsFrom(c);
  const int last = static_cast<int>(internal::AtLeastOne(c, "online.final_episodes"));
  const auto agents = c.List("online.agents");
  for (const auto& a : agents) {
    if (a != "mpcritic" && a != "baseline") throw ConfigError("unknown agent: " + a);
  }
  CsvWriter log_csv((dir / "online_log.csv").string(), TrainLogHeader());
  CsvWriter traj_csv((dir / "online_trajectories.csv").string(),
                     [&] {
                       auto h = TrajectoryHeader(base.env.n, base.env.n);
                       h.insert(h.begin(), "agent");
                       return h;
                     }());
  OnlineOutcome outcome;
  for (const auto& agent : agents) {
    for (auto seed : seeds) {
      OnlineOptions o = base;
      o.checkpoint = internal::MakeCheckpointHook(c, dir,
                                                  "online_" + agent + "_seed" + std::to_string(seed));
      TrainLog log = agent == "mpcritic" ? RunOnlineMpcritic(o, seed) : RunOnlineBaseline(o, seed);
      WriteTrainLog(log_csv, agent, seed, log, o.wall_time);
      for (const auto& r : log.trajectory) {
        std::vector<CsvCell> cells{agent, static_cast<long>(seed), static_cast<long>(r.episode),
                                   static_cast<long>(r.t)};
        for (Index i = 0; i < r.s.size(); ++i) cells.emplace_back(r.s[i]);
        for (Index i = 0; i < r.a.size(); ++i) cells.emplace_back(r.a[i]);
        cells.emplace_back(r.r);
        cells.emplace_back(static_cast<long>(r.violation ? 1 : 0));
        traj_csv.Row(cells);
      }
      if (progress) {
        const auto s = SummarizeFinal(agent, {log}, last);
        progress("online " + agent + " seed=" + std::to_string(seed) + " final return " +
                 FormatDouble(s.reward_mean) + " max violations " + std::to_string(s.viol_max));
      }
      outcome.logs[agent].push_back(std::move(log));
    }
  }
  CsvWriter sum_csv((dir / "online_summary.csv").string(), SummaryHeader());
  for (const auto& agent : agents) {
    outcome.summary.push_back(SummarizeFinal(agent, outcome.logs[agent], last));
    WriteSummaryRow(sum_csv, outcome.summary.back());
  }
  log_csv.Flush();
  traj_csv.Flush();
  sum_csv.Flush();
  for (const auto* w : {&log_csv, &traj_csv, &sum_csv}) WriteMeta(w->path(), c.Hash(), "train-online");
  return outcome;
}

struct NonlinearOutcome {
  std::map<std::string, std::vector<TrainLog>> logs;  // arm -> per-seed logs
  std::vector<SummaryRow> summary;
  std::map<std::string, std::vector<int>> episodes_to_reach;
  std::map<std::string, double> median_episodes_to_reach;
  std::map<std::string, double> median_violations;  // per-episode, all seeds
  double threshold = 0.0;
};

/// Learning speed: the best smoothed return of any arm on any seed sets
/// the bar; each run's score is the first episode whose smoothed return
/// reaches `fraction` of it.
inline void ScoreLearningSpeed(NonlinearOutcome& o, int window, double fraction) {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& [arm, runs] : o.logs) {
    for (const auto& run : runs) {
      for (double v : SmoothedReturns(run, window)) best = std::max(best, v);
    }
  }
  o.threshold = fraction * best;
  for (const auto& [arm, runs] : o.logs) {
    std::vector<double> eps, viol;
    for (const auto& run : runs) {
      const int e = EpisodesToReach(run, o.threshold, window);
      o.episodes_to_reach[arm].push_back(e);
      eps.push_back(e);
      for (const auto& ep : run.episodes) viol.push_back(ep.violations);
    }
    o.median_episodes_to_reach[arm] = Median(eps);
    o.median_violations[arm] = Median(viol);
  }
}

inline NonlinearOutcome CmdTrainNonlinear(const Config& c, const std::string& out,
                                          const ProgressFn& progress = {}) {
  const auto dir = PrepareOutDir(out);
  const NonlinearOptions base = NonlinearFromConfig(c);
  const auto seeds = SeedsFrom(c);
  const int last = static_cast<int>(internal::AtLeastOne(c, "nonlinear.final_episodes"));
  std::vector<GuidedArm> arms;
  for (const auto& a : c.List("nonlinear.arms")) arms.push_back(ParseArm(a));
  CsvWriter log_csv((dir / "nonlinear_log.csv").string(), TrainLogHeader());
  CsvWriter traj_csv((dir / "nonlinear_trajectories.csv").string(), [] {
    auto h = TrajectoryHeader(2, 1);
    h.insert(h.begin(), "agent");
    return h;
  }());
  NonlinearOutcome outcome;
  for (GuidedArm arm : arms) {
    const std::string name = ArmName(arm);
    for (auto seed : seeds) {
      NonlinearOptions o = base;
      o.checkpoint = internal::MakeCheckpointHook(c, dir,
                                                  "nonlinear_" + name + "_seed" + std::to_string(seed));
      TrainLog log = RunNonlinear(o, arm, seed);
      WriteTrainLog(log_csv, name, seed, log, o.wall_time);
      for (const auto& r : log.trajectory) {
        std::vector<CsvCell> cells{name, static_cast<long>(seed), static_cast<long>(r.episode),
                                   static_cast<long>(r.t), r.s[0], r.s[1], r.a[0], r.r,
                                   static_cast<long>(r.violation ? 1 : 0)};
        traj_csv.Row(cells);
      }
      if (progress) {
        const auto s = SummarizeFinal(name, {log}, last);
        progress("nonlinear " + name + " seed=" + std::to_string(seed) + " final return " +
                 FormatDouble(s.reward_mean));
      }
      outcome.logs[name].push_back(std::move(log));
    }
  }
  ScoreLearningSpeed(outcome, static_cast<int>(internal::AtLeastOne(c, "nonlinear.smooth")),
                     internal::Unit(c, "nonlinear.reach_fraction"));
  CsvWriter sum_csv((dir / "nonlinear_summary.csv").string(), SummaryHeader());
  CsvWriter speed_csv((dir / "nonlinear_speed.csv").string(),
                      {"agent", "seed", "episodes_to_reach", "threshold"});
  for (GuidedArm arm : arms) {
    const std::string name = ArmName(arm);
    outcome.summary.push_back(SummarizeFinal(name, outcome.logs[name], last));
    WriteSummaryRow(sum_csv, outcome.summary.back());
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      speed_csv.Row({name, static_cast<long>(seeds[i]),
                     static_cast<long>(outcome.episodes_to_reach[name][i]), outcome.threshold});
    }
  }
  log_csv.Flush();
  traj_csv.Flush();
  sum_csv.Flush();
  speed_csv.Flush();
  for (const auto* w : {&log_csv, &traj_csv, &sum_csv, &speed_csv}) {
    WriteMeta(w->path(), c.Hash(), "train-nonlinear");
  }
  return outcome;
}

}  // namespace mpcritic
