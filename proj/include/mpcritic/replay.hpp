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

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "mpcritic/envs.hpp"

namespace mpcritic {

/// Column-batched transitions. `terminal` marks true terminal states; the
/// TD target stops bootstrapping only there, not at time-limit cut-offs.
struct TransitionBatch {
  Matrix s, a, s_next;
  RowVector r, terminal;
  Index size() const { return s.cols(); }
};

/// Fixed-capacity ring buffer with uniform sampling with replacement.
class ReplayBuffer {
 public:
  ReplayBuffer(Index capacity, Index n, Index m, std::uint64_t seed)
      : s_(n, capacity), a_(m, capacity), s_next_(n, capacity),
        r_(capacity), terminal_(capacity), rng_(seed) {
    if (capacity < 1) throw ConfigError("replay capacity must be >= 1");
  }

  Index capacity() const { return s_.cols(); }
  Index size() const { return size_; }
  bool empty() const { return size_ == 0; }

  void Push(const Vector& s, const Vector& a, double r, const Vector& s_next,
            bool terminal = false) {
    if (s.size() != s_.rows() || a.size() != a_.rows() ||
        s_next.size() != s_.rows()) {
      throw ConfigError("transition shape does not match the buffer");
    }
    s_.col(next_) = s;
    a_.col(next_) = a;
    s_next_.col(next_) = s_next;
    r_[next_] = r;
    terminal_[next_] = terminal ? 1.0 : 0.0;
    next_ = (next_ + 1) % capacity();
    size_ = std::min(size_ + 1, capacity());
  }

  void Push(const Transition& t) { Push(t.s, t.a, t.r, t.s_next, false); }

  /// Slot index of the i-th oldest stored transition.
  Index SlotOfAge(Index i) const {
    return size_ < capacity() ? i : (next_ + i) % capacity();
  }

  std::vector<Index> SampleIndices(Index k) {
    if (empty()) throw ConfigError("cannot sample from an empty replay buffer");
    std::uniform_int_distribution<Index> pick(0, size_ - 1);
    std::vector<Index> idx(k);
    for (auto& i : idx) i = pick(rng_);
    return idx;
  }

  TransitionBatch Gather(const std::vector<Index>& idx) const {
    const Index k = static_cast<Index>(idx.size());
    TransitionBatch b{Matrix(s_.rows(), k), Matrix(a_.rows(), k),
                      Matrix(s_.rows(), k), RowVector(k), RowVector(k)};
    for (Index j = 0; j < k; ++j) {
      const Index i = idx[j];
      b.s.col(j) = s_.col(i);
      b.a.col(j) = a_.col(i);
      b.s_next.col(j) = s_next_.col(i);
      b.r[j] = r_[i];
      b.terminal[j] = terminal_[i];
    }
    return b;
  }

  TransitionBatch Sample(Index k) { return Gather(SampleIndices(k)); }

 private:
  Matrix s_, a_, s_next_;
  Vector r_, terminal_;
  Index next_ = 0;
  Index size_ = 0;
  Rng rng_;
};

}  // namespace mpcritic
