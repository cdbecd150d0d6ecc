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

#include <cmath>
#include <random>
#include <vector>

#include "mpcritic/diffcore.hpp"

namespace mpcritic {

/// Intermediate values recorded by a forward pass and consumed by the
/// matching backward pass. Samples are columns.
struct Trace {
  std::vector<Matrix> values;
  std::vector<Trace> children;
};

enum class Activation { kIdentity, kRelu, kTanh };

/// Fully connected network on column batches. Parameters are stored flat,
/// layer by layer, as [vec(W_l) (column-major, out x in), b_l].
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<Index> widths,
               Activation hidden = Activation::kRelu,
               Activation output = Activation::kIdentity)
      : widths_(std::move(widths)), hidden_(hidden), output_(output) {
    if (widths_.size() < 2) throw ConfigError("an MLP needs >= 2 widths");
    Index total = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      if (widths_[l] <= 0 || widths_[l + 1] <= 0) {
        throw ConfigError("MLP widths must be positive");
      }
      total += widths_[l + 1] * widths_[l] + widths_[l + 1];
    }
    params_ = Vector::Zero(total);
  }

  Index input_dim() const { return widths_.front(); }
  Index output_dim() const { return widths_.back(); }
  Index num_layers() const { return static_cast<Index>(widths_.size()) - 1; }
  Index num_params() const { return params_.size(); }
  const std::vector<Index>& widths() const { return widths_; }
  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  template <class Rng>
  void InitDefault(Rng& rng) {
    Index off = 0;
    for (Index l = 0; l < num_layers(); ++l) {
      const Index in = widths_[l], out = widths_[l + 1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Index k = 0; k < out * in + out; ++k) params_[off + k] = dist(rng);
      off += out * in + out;
    }
  }

  template <class Rng>
  void InitNormal(Rng& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Index k = 0; k < params_.size(); ++k) params_[k] = dist(rng);
  }

  Matrix Forward(const Matrix& x, Trace* trace = nullptr) const {
    if (x.rows() != input_dim()) throw ConfigError("MLP input width mismatch");
    if (trace) {
      trace->values.resize(num_layers() + 1);
      trace->values[0] = x;
    }
    Matrix h = x;
    Index off = 0;
    for (Index l = 0; l < num_layers(); ++l) {
      const Index in = widths_[l], out = widths_[l + 1];
      Eigen::Map<const Matrix> w(params_.data() + off, out, in);
      Eigen::Map<const Vector> b(params_.data() + off + out * in, out);
      off += out * in + out;
      Matrix z = w * h;
      z.colwise() += b;
      Apply(l + 1 == num_layers() ? output_ : hidden_, z);
      h = std::move(z);
      if (trace) trace->values[l + 1] = h;
    }
    return h;
  }

  /// Backpropagates `d_out` (output_dim x batch). Parameter gradients are
  /// accumulated into `grad`; returns the gradient w.r.t. the input.
  Matrix Backward(const Trace& trace, const Matrix& d_out,
                  Eigen::Ref<Vector> grad) const {
    if (grad.size() != num_params()) {
      throw ConfigError("MLP gradient buffer size mismatch");
    }
    Matrix g = d_out;
    Index off = params_.size();
    for (Index l = num_layers() - 1; l >= 0; --l) {
      const Index in = widths_[l], out = widths_[l + 1];
      off -= out * in + out;
      Derivative(l + 1 == num_layers() ? output_ : hidden_,
                 trace.values[l + 1], g);
      Eigen::Map<const Matrix> w(params_.data() + off, out, in);
      Eigen::Map<Matrix> gw(grad.data() + off, out, in);
      Eigen::Map<Vector> gb(grad.data() + off + out * in, out);
      gw.noalias() += g * trace.values[l].transpose();
      gb += g.rowwise().sum();
      Matrix next = w.transpose() * g;
      g = std::move(next);
    }
    return g;
  }

  /// Input gradient only (no parameter gradient accumulation).
  Matrix BackwardInput(const Trace& trace, const Matrix& d_out) const {
    Matrix g = d_out;
    Index off = params_.size();
    for (Index l = num_layers() - 1; l >= 0; --l) {
      const Index in = widths_[l], out = widths_[l + 1];
      off -= out * in + out;
      Derivative(l + 1 == num_layers() ? output_ : hidden_,
                 trace.values[l + 1], g);
      Eigen::Map<const Matrix> w(params_.data() + off, out, in);
      Matrix next = w.transpose() * g;
      g = std::move(next);
    }
    return g;
  }

 private:
  static void Apply(Activation act, Matrix& z) {
    switch (act) {
      case Activation::kIdentity:
        break;
      case Activation::kRelu:
        z = z.cwiseMax(0.0);
        break;
      case Activation::kTanh:
        z = z.array().tanh().matrix();
        break;
    }
  }

  // Multiplies g in place by the activation derivative, expressed through
  // the activation output h.
  static void Derivative(Activation act, const Matrix& h, Matrix& g) {
    switch (act) {
      case Activation::kIdentity:
        break;
      case Activation::kRelu:
        g = (h.array() > 0.0).select(g, 0.0);
        break;
      case Activation::kTanh:
        g.array() *= 1.0 - h.array().square();
        break;
    }
  }

  std::vector<Index> widths_;
  Activation hidden_ = Activation::kRelu;
  Activation output_ = Activation::kIdentity;
  Vector params_;
};

}  // namespace mpcritic
