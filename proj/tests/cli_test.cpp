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
#include <sys/wait.h>

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "mpcritic/checkpoint.hpp"
#include "mpcritic/config.hpp"
#include "mpcritic/csv.hpp"
#include "test_util.hpp"

namespace mpcritic {
namespace {

namespace fs = std::filesystem;
using testing::ReadFile;
using testing::TempDir;

TEST(Config, DefaultsCoverEveryKey) {
  const Config c;
  for (const auto& k : ConfigSchema()) EXPECT_EQ(c.Str(k.name), k.default_value);
  EXPECT_EQ(c.IndexList("validate.sizes"), (std::vector<Index>{4, 8, 16}));
}

TEST(Config, ParsesCommentsAndWhitespace) {
  Config c;
  c.Parse("# heading\n  online.steps =  42   # trailing\n\nonline.agents = baseline\n");
  EXPECT_EQ(c.Int("online.steps"), 42);
  EXPECT_EQ(c.List("online.agents"), std::vector<std::string>{"baseline"});
  c.Override("online.gamma=0.5");
  EXPECT_DOUBLE_EQ(c.Double("online.gamma"), 0.5);
}

TEST(Config, UnknownKeyIsNamed) {
  Config c;
  try {
    c.Parse("online.stepz = 3\n");
    FAIL() << "expected a ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("online.stepz"), std::string::npos);
  }
  EXPECT_THROW(c.Parse("just words\n"), ConfigError);
  EXPECT_THROW(c.Override("no-equals"), ConfigError);
}

TEST(Config, TypedAccessorsValidate) {
  Config c;
  c.Set("online.steps", "ten");
  EXPECT_THROW(c.Int("online.steps"), ConfigError);
  c.Set("log.wall_time", "maybe");
  EXPECT_THROW(c.Bool("log.wall_time"), ConfigError);
  c.Set("online.gamma", "0.9x");
  EXPECT_THROW(c.Double("online.gamma"), ConfigError);
}

TEST(Config, HashTracksContentNotOrder) {
  Config a, b, c;
  a.Parse("online.steps = 5\nonline.batch = 7\n");
  b.Parse("online.batch = 7\nonline.steps = 5\n");
  c.Parse("online.steps = 6\nonline.batch = 7\n");
  EXPECT_EQ(a.Hash(), b.Hash());
  EXPECT_NE(a.Hash(), c.Hash());
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Layout layout;
  layout.Append("terminal", 3);
  layout.Append("controller", 4);
  ParamVector p(layout);
  p.values() << 0.1, -0.0, 1e-310, std::numeric_limits<double>::max(), -1.0 / 3.0, 2.5e-17,
      123456789.123456789;
  std::stringstream ss;
  WriteCheckpoint(ss, p);
  const ParamVector q = ReadCheckpoint(ss);
  ASSERT_EQ(q.size(), p.size());
  EXPECT_EQ(q.layout().segments().size(), 2u);
  for (Index i = 0; i < p.size(); ++i) {
    EXPECT_EQ(std::memcmp(&p.values()[i], &q.values()[i], sizeof(double)), 0) << i;
  }
  const fs::path file = TempDir("ckpt") / "p.ckpt";
  SaveCheckpoint(file.string(), p);
  EXPECT_EQ(LoadCheckpoint(file.string()).values(), p.values());
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream bad("not-a-checkpoint 1\n");
  EXPECT_THROW(ReadCheckpoint(bad), IoError);
  EXPECT_THROW(LoadCheckpoint("/nonexistent/dir/x.ckpt"), IoError);
}

TEST(Csv, DoublesRoundTrip) {
  EXPECT_EQ(FormatDouble(0.1), "0.10000000000000001");
  for (double v : {1.0 / 3.0, -2.5e-300, 6.02214076e23}) {
    EXPECT_EQ(std::strtod(FormatDouble(v).c_str(), nullptr), v);
  }
}

TEST(Csv, WriterAndSidecar) {
  const fs::path file = TempDir("csv") / "t.csv";
  {
    CsvWriter w(file.string(), {"a", "b", "c"});
    w.Row({std::string("x"), 0.5, 3L});
    EXPECT_THROW(w.Row({1L}), ConfigError);
    w.Flush();
  }
  EXPECT_EQ(ReadFile(file), "a,b,c\nx,0.5,3\n");
  WriteMeta(file.string(), 0xabcULL, "unit");
  const std::string meta = ReadFile(file.string() + ".meta");
  EXPECT_NE(meta.find("config_hash=0000000000000abc"), std::string::npos);
  EXPECT_NE(meta.find("experiment=unit"), std::string::npos);
  EXPECT_NE(meta.find("version="), std::string::npos);
}

// ---------------------------------------------------------------------------
// End-to-end runs of the command-line tool.

struct RunResult {
  int code = -1;
  std::string out, err;
};

RunResult RunCli(const std::string& args, const fs::path& dir) {
  const char* cli = std::getenv("MPCRITIC_CLI");
  if (!cli) throw std::runtime_error("MPCRITIC_CLI is not set");
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(cli) + " " + args + " >" + out.string() + " 2>" +
                          err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = ReadFile(out);
  r.err = ReadFile(err);
  return r;
}

fs::path WriteConfig(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "run.cfg";
  std::ofstream(p) << text;
  return p;
}

const char* kTinyOnline =
    "seeds = 0,1\n"
    "env.n = 2\n"
    "online.steps = 100\n"
    "online.batch = 8\n"
    "online.horizon = 2\n"
    "online.actor_hidden = 8\n"
    "online.critic_hidden = 8\n"
    "online.start_updates = 8\n"
    "online.buffer = 200\n"
    "online.final_episodes = 1\n";

TEST(Cli, ExitCodes) {
  const fs::path dir = TempDir("cli_codes");
  const fs::path bad = WriteConfig(dir, "online.nonsense = 1\n");
  RunResult r = RunCli("train-online --config " + bad.string(), dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("online.nonsense"), std::string::npos);

  r = RunCli("train-online --config " + (dir / "missing.cfg").string(), dir);
  EXPECT_EQ(r.code, 3);

  r = RunCli("train-online", dir);
  EXPECT_EQ(r.code, 1);

  r = RunCli("train-online --config " + WriteConfig(dir, kTinyOnline).string() +
                 " --override online.gamma=2",
             dir);
  EXPECT_EQ(r.code, 1);

  r = RunCli("train-online --config " + WriteConfig(dir, kTinyOnline).string() +
                 " --out /proc/forbidden",
             dir);
  EXPECT_EQ(r.code, 3);
}

TEST(Cli, ZeroStepsWritesHeadersOnly) {
  const fs::path dir = TempDir("cli_zero");
  const fs::path cfg = WriteConfig(dir, kTinyOnline);
  const RunResult r = RunCli("train-online --quiet --config " + cfg.string() +
                                 " --override online.steps=0 --out " + (dir / "o").string(),
                             dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string log = ReadFile(dir / "o" / "online_log.csv");
  EXPECT_EQ(log,
            "agent,seed,step,episode,return,violations,critic_loss,actor_loss,model_loss,"
            "rmse_closed_loop,wall_time\n");
  EXPECT_TRUE(fs::exists(dir / "o" / "online_log.csv.meta"));
}

TEST(Cli, RerunsAreByteIdentical) {
  const fs::path dir = TempDir("cli_rerun");
  const fs::path cfg = WriteConfig(dir, kTinyOnline);
  for (const char* sub : {"a", "b"}) {
    const RunResult r =
        RunCli("train-online --quiet --config " + cfg.string() + " --out " + (dir / sub).string(),
               dir);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* f : {"online_log.csv", "online_trajectories.csv", "online_summary.csv",
                        "online_log.csv.meta"}) {
    const std::string a = ReadFile(dir / "a" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, ReadFile(dir / "b" / f)) << f;
  }
  const std::string summary = ReadFile(dir / "a" / "online_summary.csv");
  EXPECT_EQ(summary.substr(0, summary.find('\n')), "agent,reward_mean,reward_sd,viol_min,viol_max");
  EXPECT_NE(summary.find("\nmpcritic,"), std::string::npos);
  EXPECT_NE(summary.find("\nbaseline,"), std::string::npos);
}

TEST(Cli, SeedFlagSelectsOneSeed) {
  const fs::path dir = TempDir("cli_seed");
  const fs::path cfg = WriteConfig(dir, kTinyOnline);
  const RunResult r = RunCli("train-online --quiet --seed 7 --config " + cfg.string() +
                                 " --override online.agents=baseline --out " +
                                 (dir / "o").string(),
                             dir);
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream log(ReadFile(dir / "o" / "online_log.csv"));
  std::string line;
  std::getline(log, line);
  int rows = 0;
  while (std::getline(log, line)) {
    EXPECT_EQ(line.rfind("baseline,7,", 0), 0u) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 2);
}

TEST(Cli, TimingHasOneRowPerCell) {
  const fs::path dir = TempDir("cli_timing");
  const fs::path cfg = WriteConfig(dir,
                                   "timing.sizes = 2,3\n"
                                   "timing.batch = 4\n"
                                   "timing.seeds = 2\n"
                                   "timing.hidden = 4\n"
                                   "timing.repeats = 1\n");
  const RunResult r =
      RunCli("bench-timing --quiet --config " + cfg.string() + " --out " + (dir / "o").string(),
             dir);
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(ReadFile(dir / "o" / "timing.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "n,m,batch,policy,direction,mean_s,std_s,seeds");
  std::set<std::string> cells;
  int rows = 0;
  while (std::getline(csv, line)) {
    std::istringstream fields(line);
    std::string n, m, batch, policy, direction;
    std::getline(fields, n, ',');
    std::getline(fields, m, ',');
    std::getline(fields, batch, ',');
    std::getline(fields, policy, ',');
    std::getline(fields, direction, ',');
    cells.insert(n + "/" + policy + "/" + direction);
    ++rows;
  }
  EXPECT_EQ(rows, 8);
  EXPECT_EQ(cells.size(), 8u);
}

TEST(Cli, ValidateWritesCurvesAndSummary) {
  const fs::path dir = TempDir("cli_validate");
  const fs::path cfg = WriteConfig(dir,
                                   "seeds = 0,1\n"
                                   "validate.sizes = 2\n"
                                   "validate.steps = 50\n"
                                   "validate.dataset = 100\n"
                                   "validate.batch = 16\n"
                                   "validate.log_every = 10\n");
  const RunResult r =
      RunCli("validate-lqr --quiet --config " + cfg.string() + " --out " + (dir / "o").string(),
             dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string summary = ReadFile(dir / "o" / "validate_summary.csv");
  EXPECT_EQ(summary.substr(0, summary.find('\n')),
            "n,seeds,closed_loop_mean,closed_loop_2sd,model_mean,model_2sd,gain_mean,"
            "terminal_mean,terminal_2sd,terminal_bias");
  const std::string curves = ReadFile(dir / "o" / "validate_curves.csv");
  EXPECT_NE(curves.find("\n2,1,50,"), std::string::npos);
  EXPECT_NE(r.out.find("n=2"), std::string::npos);
}

}  // namespace
}  // namespace mpcritic
