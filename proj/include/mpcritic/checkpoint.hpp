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

// Text checkpoints for flat parameter vectors. Values are written as C99
// hexadecimal floats, so a save/load round trip reproduces every bit.
//
//   mpcritic-checkpoint 1
//   segment <id> <length>
//   ...
//   values <count>
//   <one hexfloat per line>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "mpcritic/diffcore.hpp"

namespace mpcritic {

inline void WriteCheckpoint(std::ostream& out, const ParamVector& p) {
  out << "mpcritic-checkpoint 1\n";
  for (const auto& s : p.layout().segments()) {
    out << "segment " << s.id << ' ' << s.length << '\n';
  }
  out << "values " << p.size() << '\n';
  char buf[64];
  for (Index i = 0; i < p.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%a\n", p.values()[i]);
    out << buf;
  }
  if (!out) throw IoError("failed to write checkpoint");
}

inline ParamVector ReadCheckpoint(std::istream& in) {
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != "mpcritic-checkpoint" || version != 1) {
    throw IoError("not an mpcritic checkpoint");
  }
  Layout layout;
  Index count = -1;
  while (in >> word) {
    if (word == "segment") {
      std::string id;
      Index length = 0;
      if (!(in >> id >> length)) throw IoError("truncated segment record");
      layout.Append(id, length);
    } else if (word == "values") {
      if (!(in >> count)) throw IoError("truncated value count");
      break;
    } else {
      throw IoError("unexpected checkpoint record: " + word);
    }
  }
  if (count != layout.size()) {
    throw IoError("checkpoint value count does not match its layout");
  }
  Vector values(count);
  for (Index i = 0; i < count; ++i) {
    if (!(in >> word)) throw IoError("truncated checkpoint values");
    char* end = nullptr;
    values[i] = std::strtod(word.c_str(), &end);
    if (end == word.c_str() || *end != '\0') {
      throw IoError("malformed checkpoint value: " + word);
    }
  }
  return {layout, values};
}

inline void SaveCheckpoint(const std::string& path, const ParamVector& p) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  WriteCheckpoint(out, p);
}

inline ParamVector LoadCheckpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  return ReadCheckpoint(in);
}

}  // namespace mpcritic
