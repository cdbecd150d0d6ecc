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

// Experiment runner. Exit codes: 0 success, 1 configuration error,
// 2 numeric divergence, 3 I/O error.

#include <CLI11.hpp>
#include <malloc.h>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mpcritic/experiments.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::optional<long> seed;
  std::string out;
  std::vector<std::string> overrides;
  bool quiet = false;
};

void AddCommon(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config, "configuration file")->required();
  sub->add_option("--seed", args.seed, "run a single seed instead of the configured list");
  sub->add_option("--out", args.out, "output directory (overrides the config)");
  sub->add_option("--override", args.overrides, "key=value override, repeatable");
  sub->add_flag("--quiet", args.quiet, "suppress progress output");
}

mpcritic::Config LoadConfig(const CommonArgs& args) {
  mpcritic::Config c = mpcritic::Config::FromFile(args.config);
  for (const auto& o : args.overrides) c.Override(o);
  if (args.seed) c.Set("seeds", std::to_string(*args.seed));
  if (!args.out.empty()) c.Set("out", args.out);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates many short-lived matrices just above glibc's
  // default mmap threshold; keep them on the heap.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"MPC-structured critics: experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MPCRITIC_VERSION);

  CommonArgs args;
  const std::vector<std::string> names = {"validate-lqr", "bench-timing", "train-online",
                                          "train-nonlinear"};
  const std::vector<std::string> help = {
      "offline LQR parameter recovery", "controller vs MPC forward/backward timing",
      "online constrained LQR: MPC actor vs neural baseline",
      "nonlinear benchmark: vanilla vs guided actors"};
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < names.size(); ++i) {
    subs.push_back(app.add_subcommand(names[i], help[i]));
    AddCommon(subs.back(), args);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const mpcritic::Config c = LoadConfig(args);
    const std::string out = c.Str("out");
    const mpcritic::ProgressFn progress = [&](const std::string& msg) {
      if (!args.quiet) std::cerr << msg << '\n';
    };
    if (subs[0]->parsed()) {
      for (const auto& s : mpcritic::CmdValidateLqr(c, out, progress)) {
        std::printf("n=%ld closed-loop %.3e +- %.1e  model %.3e  terminal %.3e\n",
                    static_cast<long>(s.n), s.closed_loop_mean, s.closed_loop_2sd, s.model_mean,
                    s.terminal_mean);
      }
    } else if (subs[1]->parsed()) {
      for (const auto& r : mpcritic::CmdBenchTiming(c, out, progress)) {
        std::printf("n=%ld %-4s %-8s %.3e s\n", static_cast<long>(r.n), r.policy.c_str(),
                    r.direction.c_str(), r.mean_s);
      }
    } else if (subs[2]->parsed()) {
      for (const auto& r : mpcritic::CmdTrainOnline(c, out, progress).summary) {
        std::printf("%-10s return %.3f +- %.3f  violations [%d, %d]\n", r.agent.c_str(),
                    r.reward_mean, r.reward_sd, r.viol_min, r.viol_max);
      }
    } else {
      const auto o = mpcritic::CmdTrainNonlinear(c, out, progress);
      for (const auto& r : o.summary) {
        std::printf("%-18s return %.3f +- %.3f  median episodes to reach %.1f\n",
                    r.agent.c_str(), r.reward_mean, r.reward_sd,
                    o.median_episodes_to_reach.at(r.agent));
      }
    }
  } catch (const mpcritic::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const mpcritic::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 2;
  } catch (const mpcritic::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
