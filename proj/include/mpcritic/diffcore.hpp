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

// Flat parameter/gradient vectors with named component slices, the
// value-and-gradient contract every trainable loss satisfies, and the
// first-order optimizers that consume it.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mpcritic {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// Raised for inconsistent shapes, layouts, or configuration values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a computation produces NaN/Inf. `where()` names the
/// offending component (or rollout step).
class NumericError : public std::runtime_error {
 public:
  NumericError(std::string where, const std::string& what)
      : std::runtime_error(what), where_(std::move(where)) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

/// Raised when reading or writing files fails.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Segment {
  std::string id;
  Index offset = 0;
  Index length = 0;
};

/// Ordered, contiguous, non-overlapping list of named slices.
class Layout {
 public:
  Layout() = default;

  Layout& Append(std::string id, Index length) {
    if (length < 0) throw ConfigError("negative segment length for " + id);
    if (Contains(id)) throw ConfigError("duplicate layout component: " + id);
    segments_.push_back({std::move(id), size_, length});
    size_ += length;
    return *this;
  }

  Index size() const { return size_; }
  const std::vector<Segment>& segments() const { return segments_; }

  bool Contains(std::string_view id) const {
    return std::any_of(segments_.begin(), segments_.end(),
                       [&](const Segment& s) { return s.id == id; });
  }

  const Segment& Find(std::string_view id) const {
    for (const auto& s : segments_) {
      if (s.id == id) return s;
    }
    throw ConfigError("unknown layout component: " + std::string(id));
  }

  bool operator==(const Layout& other) const {
    if (size_ != other.size_ || segments_.size() != other.segments_.size()) {
      return false;
    }
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      const auto& a = segments_[i];
      const auto& b = other.segments_[i];
      if (a.id != b.id || a.offset != b.offset || a.length != b.length) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Segment> segments_;
  Index size_ = 0;
};

/// A flat vector of reals carrying its layout. `Tag` keeps parameters and
/// gradients from being mixed up at compile time.
template <class Tag>
class FlatVector {
 public:
  FlatVector() = default;
  explicit FlatVector(Layout layout)
      : layout_(std::move(layout)), values_(Vector::Zero(layout_.size())) {}
  FlatVector(Layout layout, Vector values)
      : layout_(std::move(layout)), values_(std::move(values)) {
    if (values_.size() != layout_.size()) {
      throw ConfigError("flat vector length does not match its layout");
    }
  }

  const Layout& layout() const { return layout_; }
  Index size() const { return values_.size(); }
  Vector& values() { return values_; }
  const Vector& values() const { return values_; }

  auto slice(std::string_view id) {
    const auto& s = layout_.Find(id);
    return values_.segment(s.offset, s.length);
  }
  auto slice(std::string_view id) const {
    const auto& s = layout_.Find(id);
    return values_.segment(s.offset, s.length);
  }

 private:
  Layout layout_;
  Vector values_;
};

struct ParamTag {};
struct GradTag {};
using ParamVector = FlatVector<ParamTag>;
using GradVector = FlatVector<GradTag>;

/// First component id holding a non-finite entry, or empty if all finite.
template <class Tag>
std::string FirstNonFiniteComponent(const FlatVector<Tag>& v) {
  for (const auto& s : v.layout().segments()) {
    if (!v.values().segment(s.offset, s.length).allFinite()) return s.id;
  }
  return {};
}

/// A differentiable loss: registered layout plus Evaluate(params, batch,
/// grad). `grad` may be null when only the value is wanted.
template <class L>
concept DifferentiableLoss = requires(const L& loss, const ParamVector& p,
                                      const typename L::Batch& b,
                                      GradVector* g) {
  { loss.layout() } -> std::convertible_to<const Layout&>;
  { loss.Evaluate(p, b, g) } -> std::convertible_to<double>;
};

/// Evaluates a loss and its exact gradient, enforcing the layout contract
/// and finiteness of the result.
template <DifferentiableLoss L>
std::pair<double, GradVector> ValueAndGrad(const L& loss,
                                           const ParamVector& params,
                                           const typename L::Batch& batch) {
  if (!(params.layout() == loss.layout())) {
    throw ConfigError("parameter layout does not match the loss layout");
  }
  GradVector grad(params.layout());
  const double value = loss.Evaluate(params, batch, &grad);
  if (!std::isfinite(value)) {
    throw NumericError("loss", "non-finite loss value");
  }
  if (auto bad = FirstNonFiniteComponent(grad); !bad.empty()) {
    throw NumericError(bad, "non-finite gradient in component " + bad);
  }
  return {value, std::move(grad)};
}

enum class Direction { kDescent, kAscent };

inline ParamVector SgdStep(const ParamVector& params, const GradVector& grad,
                           double rate, Direction direction) {
  if (!(rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(params.layout() == grad.layout())) {
    throw ConfigError("gradient layout does not match parameters");
  }
  const double sign = direction == Direction::kDescent ? -1.0 : 1.0;
  return ParamVector(params.layout(),
                     params.values() + sign * rate * grad.values());
}

/// Adam with optional linear decay of the step size to zero over
/// `decay_steps` updates.
class Adam {
 public:
  struct Options {
    double rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long decay_steps = 0;  // 0 disables decay
  };

  Adam() = default;
  Adam(Index size, Options options)
      : options_(options), m_(Vector::Zero(size)), v_(Vector::Zero(size)) {
    if (!(options_.rate >= 0.0)) {
      throw ConfigError("learning rate must be non-negative");
    }
  }

  Index size() const { return m_.size(); }
  long steps() const { return t_; }
  const Options& options() const { return options_; }

  double CurrentRate() const {
    if (options_.decay_steps <= 0) return options_.rate;
    const double frac = 1.0 - static_cast<double>(t_) /
                                  static_cast<double>(options_.decay_steps);
    return options_.rate * std::max(frac, 0.0);
  }

  /// In-place update of `params` (any contiguous vector or slice).
  void Step(Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& grad,
            Direction direction = Direction::kDescent) {
    if (params.size() != m_.size() || grad.size() != m_.size()) {
      throw ConfigError("optimizer state size mismatch");
    }
    const double rate = CurrentRate();
    ++t_;
    const double sign = direction == Direction::kDescent ? 1.0 : -1.0;
    m_ = options_.beta1 * m_ + (1.0 - options_.beta1) * (sign * grad);
    v_ = options_.beta2 * v_ +
         (1.0 - options_.beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    params -= (rate / bc1) *
              (m_.array() / ((v_.array() / bc2).sqrt() + options_.eps))
                  .matrix();
  }

  void Step(ParamVector& params, const GradVector& grad,
            Direction direction = Direction::kDescent) {
    if (!(params.layout() == grad.layout())) {
      throw ConfigError("gradient layout does not match parameters");
    }
    Step(params.values(), grad.values(), direction);
  }

 private:
  Options options_;
  Vector m_;
  Vector v_;
  long t_ = 0;
};

/// Polyak averaging: target <- (1 - rate) * target + rate * online.
inline void PolyakUpdate(Vector& target, const Vector& online, double rate) {
  if (target.size() != online.size()) {
    throw ConfigError("target/online parameter size mismatch");
  }
  target = (1.0 - rate) * target + rate * online;
}

}  // namespace mpcritic
