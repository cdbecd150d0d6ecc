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

// CSV output with a fixed numeric format (17 significant digits, so values
// round-trip) and a metadata sidecar `<file>.meta`.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <string>
#include <variant>
#include <vector>

#include "mpcritic/diffcore.hpp"
#include "mpcritic/envs.hpp"

#ifndef MPCRITIC_VERSION
#define MPCRITIC_VERSION "0.0.0"
#endif

namespace mpcritic {

using CsvCell = std::variant<std::string, double, long>;

inline std::string FormatDouble(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header)
      : path_(path), out_(path), columns_(header.size()) {
    if (!out_) throw IoError("cannot open for writing: " + path);
    WriteRaw(header);
  }

  const std::string& path() const { return path_; }

  void Row(const std::vector<CsvCell>& cells) {
    if (cells.size() != columns_) throw ConfigError("CSV row width mismatch in " + path_);
    std::vector<std::string> text;
    text.reserve(cells.size());
    for (const auto& c : cells) {
      if (const auto* s = std::get_if<std::string>(&c)) {
        text.push_back(*s);
      } else if (const auto* d = std::get_if<double>(&c)) {
        text.push_back(FormatDouble(*d));
      } else {
        text.push_back(std::to_string(std::get<long>(c)));
      }
    }
    WriteRaw(text);
  }

  void Flush() {
    out_.flush();
    if (!out_) throw IoError("write failed: " + path_);
  }

 private:
  void WriteRaw(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
    if (!out_) throw IoError("write failed: " + path_);
  }

  std::string path_;
  std::ofstream out_;
  std::size_t columns_;
};

/// Writes `<csv>.meta` with the config hash, code version and experiment.
inline void WriteMeta(const std::string& csv_path, std::uint64_t config_hash,
                      const std::string& experiment) {
  std::ofstream out(csv_path + ".meta");
  if (!out) throw IoError("cannot open for writing: " + csv_path + ".meta");
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(config_hash));
  out << "config_hash=" << hash << "\n"
      << "version=" << MPCRITIC_VERSION << "\n"
      << "experiment=" << experiment << "\n";
  if (!out) throw IoError("write failed: " + csv_path + ".meta");
}

inline std::vector<std::string> TrajectoryHeader(Index n, Index m) {
  std::vector<std::string> h{"seed", "episode", "t"};
  for (Index i = 0; i < n; ++i) h.push_back("s" + std::to_string(i));
  for (Index i = 0; i < m; ++i) h.push_back("a" + std::to_string(i));
  h.push_back("r");
  h.push_back("violation");
  return h;
}

inline void WriteTrajectoryRows(CsvWriter& w, std::uint64_t seed,
                                const std::vector<TrajectoryRow>& rows) {
  for (const auto& r : rows) {
    std::vector<CsvCell> cells{static_cast<long>(seed), static_cast<long>(r.episode),
                               static_cast<long>(r.t)};
    for (Index i = 0; i < r.s.size(); ++i) cells.emplace_back(r.s[i]);
    for (Index i = 0; i < r.a.size(); ++i) cells.emplace_back(r.a[i]);
    cells.emplace_back(r.r);
    cells.emplace_back(static_cast<long>(r.violation ? 1 : 0));
    w.Row(cells);
  }
}

}  // namespace mpcritic
