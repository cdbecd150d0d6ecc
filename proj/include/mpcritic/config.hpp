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

// Experiment configuration: flat dotted keys, one `key = value` per line,
// `#` starts a comment. Every key must be declared in the schema; values
// are validated when read.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mpcritic/diffcore.hpp"

namespace mpcritic {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// All keys understood by the experiment runner.
inline const std::vector<ConfigKey>& ConfigSchema() {
  static const std::vector<ConfigKey> keys = {
      {"seeds", "0,1,2,3,4", "comma-separated seed list"},
      {"out", "out", "output directory"},
      {"log.wall_time", "false", "record wall-clock seconds (breaks byte-identical logs)"},
      {"checkpoint.every", "0", "checkpoint interval in updates (0 disables)"},

      {"validate.sizes", "4,8,16", "n = m sizes"},
      {"validate.steps", "100000", "update steps"},
      {"validate.dataset", "100000", "offline transitions"},
      {"validate.batch", "256", "minibatch size"},
      {"validate.lr_critic", "1e-3", "terminal learning rate"},
      {"validate.lr_actor", "1e-3", "gain learning rate"},
      {"validate.lr_model", "1e-3", "model learning rate"},
      {"validate.lr_decay", "true", "decay learning rates linearly to zero"},
      {"validate.tau", "0.005", "target averaging rate"},
      {"validate.gamma", "1.0", "TD discount"},
      {"validate.horizon", "1", "rollout horizon N"},
      {"validate.terminal_form", "factored", "symmetric | factored"},
      {"validate.init_std", "1.0", "initial parameter standard deviation"},
      {"validate.log_every", "1000", "curve sampling interval"},

      {"timing.sizes", "4,8,16,32,64,128", "n = m sizes"},
      {"timing.batch", "256", "states per batch"},
      {"timing.seeds", "10", "timing repetitions with fresh states"},
      {"timing.hidden", "100,100", "controller hidden widths"},
      {"timing.horizon", "1", "MPC horizon"},
      {"timing.repeats", "5", "controller timing repeats per seed"},
      {"timing.mpc_samples", "256", "timed MPC solves per seed (scaled to the batch)"},
      {"timing.rho_qp", "1000", "state penalty weight of the MPC"},

      {"env.n", "4", "LQR state and action dimension"},
      {"env.m_weight", "1e-3", "state weight M = m_weight * I"},
      {"env.r_weight", "1.0", "action weight R = r_weight * I"},
      {"env.horizon", "50", "episode length"},

      {"online.agents", "mpcritic,baseline", "agents to train"},
      {"online.steps", "100000", "environment steps"},
      {"online.batch", "256", "minibatch size"},
      {"online.gamma", "0.99", "TD discount"},
      {"online.tau", "0.005", "target averaging rate"},
      {"online.policy_delay", "2", "critic updates per actor update"},
      {"online.lr_critic", "1e-3", "critic learning rate"},
      {"online.lr_actor", "1e-3", "actor learning rate"},
      {"online.lr_model", "1e-2", "model learning rate"},
      {"online.horizon", "10", "MPC horizon N"},
      {"online.rho", "10", "rollout penalty weight"},
      {"online.rho_qp", "1000", "state penalty weight of the online MPC"},
      {"online.explore", "0.1", "exploration noise (fraction of half-width)"},
      {"online.target_noise", "0.2", "target smoothing noise"},
      {"online.target_clip", "0.5", "target smoothing clip"},
      {"online.actor_hidden", "100,100", "controller / actor hidden widths"},
      {"online.critic_hidden", "256", "baseline critic hidden widths"},
      {"online.init_std", "0.1", "initial std of linear parameters"},
      {"online.learn_stage", "false", "train the stage cost weights"},
      {"online.buffer", "1000000", "replay capacity"},
      {"online.start_updates", "256", "steps before the first update"},
      {"online.final_episodes", "10", "episodes in the summary window"},

      {"reactor.dt", "0.1", "integration step"},
      {"reactor.k0", "0.25", "rate constant"},
      {"reactor.beta", "2.5", "temperature sensitivity"},
      {"reactor.cool", "0.5", "cooling rate"},
      {"reactor.heat", "0.2", "reaction heat"},
      {"reactor.flow", "1.0", "dilution rate"},
      {"reactor.goal", "0.6", "concentration goal"},
      {"reactor.sigma2", "0.0025", "reward width"},
      {"reactor.t_max", "0.8", "temperature limit"},
      {"reactor.init_spread", "0.05", "reset perturbation"},
      {"reactor.horizon", "50", "episode length"},

      {"nonlinear.arms", "vanilla,guided,guided_constrained", "arms to train"},
      {"nonlinear.steps", "10000", "environment steps"},
      {"nonlinear.batch", "128", "minibatch size"},
      {"nonlinear.gamma", "0.99", "TD discount"},
      {"nonlinear.tau", "0.005", "target averaging rate"},
      {"nonlinear.policy_delay", "2", "critic updates per actor update"},
      {"nonlinear.lr_critic", "1e-3", "critic learning rate"},
      {"nonlinear.lr_actor", "1e-3", "actor learning rate"},
      {"nonlinear.lr_model", "1e-3", "model learning rate"},
      {"nonlinear.hidden", "64,64", "hidden widths of all networks"},
      {"nonlinear.horizon", "5", "rollout horizon N"},
      {"nonlinear.rho", "10", "rollout penalty weight"},
      {"nonlinear.stage_sigma2", "0.25", "stage cost width"},
      {"nonlinear.explore", "0.1", "exploration noise"},
      {"nonlinear.target_noise", "0.2", "target smoothing noise"},
      {"nonlinear.target_clip", "0.5", "target smoothing clip"},
      {"nonlinear.model_every", "1", "model update interval"},
      {"nonlinear.buffer", "1000000", "replay capacity"},
      {"nonlinear.start_updates", "128", "steps before the first update"},
      {"nonlinear.smooth", "10", "return smoothing window for learning speed"},
      {"nonlinear.reach_fraction", "0.9", "fraction of the best return to reach"},
      {"nonlinear.final_episodes", "10", "episodes in the summary window"},
  };
  return keys;
}

class Config {
 public:
  Config() {
    for (const auto& k : ConfigSchema()) values_[k.name] = k.default_value;
  }

  static Config FromFile(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    Config c;
    c.Parse(ss.str(), path);
    return c;
  }

  void Parse(const std::string& text, const std::string& origin = "<config>") {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = Trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      }
      Set(Trim(line.substr(0, eq)), Trim(line.substr(eq + 1)));
    }
  }

  /// Applies a `key=value` override.
  void Override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override needs key=value: " + assignment);
    Set(Trim(assignment.substr(0, eq)), Trim(assignment.substr(eq + 1)));
  }

  void Set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) throw ConfigError("unknown config key: " + key);
    values_[key] = value;
  }

  const std::string& Str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    return it->second;
  }

  double Double(const std::string& key) const { return ToDouble(key, Str(key)); }

  long Int(const std::string& key) const { return ToLong(key, Str(key)); }

  bool Bool(const std::string& key) const {
    const std::string& v = Str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key " + key + " expects a boolean, got '" + v + "'");
  }

  std::vector<std::string> List(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(Str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = Trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::vector<long> IntList(const std::string& key) const {
    std::vector<long> out;
    for (const auto& s : List(key)) out.push_back(ToLong(key, s));
    return out;
  }

  std::vector<Index> IndexList(const std::string& key) const {
    std::vector<Index> out;
    for (long v : IntList(key)) out.push_back(static_cast<Index>(v));
    return out;
  }

  /// Sorted `key = value` lines; the basis of the config hash. The output
  /// location does not change results and is left out.
  std::string Canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) {
      if (k != "out") out += k + " = " + v + "\n";
    }
    return out;
  }

  /// 64-bit FNV-1a of the canonical form.
  std::uint64_t Hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : Canonical()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  static std::string Trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static double ToDouble(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError("config key " + key + " expects a number, got '" + v + "'");
  }

  static long ToLong(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const long d = std::stol(v, &pos);
      if (pos == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError("config key " + key + " expects an integer, got '" + v + "'");
  }

  std::map<std::string, std::string> values_;
};

}  // namespace mpcritic
