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

// Learnable building blocks of an MPC-structured critic: dynamics model,
// fictitious controller, stage cost, terminal value and box constraints.
// Every block works on column batches and exposes a backward pass that
// returns input gradients and accumulates parameter gradients.

#include <memory>
#include <string>
#include <utility>

#include "mpcritic/diffcore.hpp"
#include "mpcritic/nn.hpp"

namespace mpcritic {

namespace internal {

inline Matrix Sym(const Matrix& w) { return 0.5 * (w + w.transpose()); }

// Column-wise quadratic forms x_b' Q x_b.
inline RowVector QuadForms(const Matrix& q, const Matrix& x) {
  return (x.array() * (q * x).array()).colwise().sum();
}

inline void AccumulateGrad(Vector* grad, const Eigen::Ref<const Vector>& g) {
  if (grad) *grad += g;
}

}  // namespace internal

// ---------------------------------------------------------------------------
// Box constraints

/// Per-coordinate bounds lower < upper. Used as the state constraint h and
/// the action constraint g.
class BoxConstraint {
 public:
  BoxConstraint() = default;
  BoxConstraint(Vector lower, Vector upper)
      : lower_(std::move(lower)), upper_(std::move(upper)) {
    if (lower_.size() != upper_.size()) {
      throw ConfigError("box bounds differ in length");
    }
    if (!(lower_.array() < upper_.array()).all()) {
      throw ConfigError("box requires lower < upper elementwise");
    }
  }
  static BoxConstraint Symmetric(Index dim, double half_width) {
    return {Vector::Constant(dim, -half_width), Vector::Constant(dim, half_width)};
  }

  Index dim() const { return lower_.size(); }
  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }
  Vector center() const { return 0.5 * (lower_ + upper_); }
  Vector half_width() const { return 0.5 * (upper_ - lower_); }

  bool Contains(const Vector& x) const {
    return (x.array() >= lower_.array()).all() &&
           (x.array() <= upper_.array()).all();
  }

  Vector Clip(const Vector& x) const {
    return x.cwiseMax(lower_).cwiseMin(upper_);
  }

  /// Stacked [max(lower - x, 0); max(x - upper, 0)] per column.
  Matrix Violation(const Matrix& x) const {
    CheckDim(x);
    Matrix v(2 * dim(), x.cols());
    v.topRows(dim()) = ((-x).colwise() + lower_).cwiseMax(0.0);
    v.bottomRows(dim()) = (x.colwise() - upper_).cwiseMax(0.0);
    return v;
  }
  Vector Violation(const Vector& x) const {
    return Violation(Matrix(x)).col(0);
  }

  /// L1 norm of the violation per column.
  RowVector L1(const Matrix& x) const { return Violation(x).colwise().sum(); }

  /// Gradient of L1 w.r.t. x (kinks map to 0).
  Matrix L1Grad(const Matrix& x) const {
    CheckDim(x);
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    for (Index j = 0; j < x.cols(); ++j) {
      for (Index i = 0; i < x.rows(); ++i) {
        if (x(i, j) < lower_[i]) {
          g(i, j) = -1.0;
        } else if (x(i, j) > upper_[i]) {
          g(i, j) = 1.0;
        }
      }
    }
    return g;
  }

 private:
  void CheckDim(const Matrix& x) const {
    if (x.rows() != dim()) throw ConfigError("box dimension mismatch");
  }

  Vector lower_;
  Vector upper_;
};

// ---------------------------------------------------------------------------
// Dynamics f(x, u)

class Dynamics {
 public:
  virtual ~Dynamics() = default;
  virtual Index state_dim() const = 0;
  virtual Index action_dim() const = 0;
  virtual Vector& params() = 0;
  virtual const Vector& params() const = 0;
  Index num_params() const { return params().size(); }

  virtual Matrix Predict(const Matrix& x, const Matrix& u,
                         Trace* trace = nullptr) const = 0;
  /// `d_next` is the gradient w.r.t. the predicted state. d_x / d_u are
  /// overwritten when non-null; parameter gradients accumulate into grad.
  virtual void Backward(const Trace& trace, const Matrix& d_next, Matrix* d_x,
                        Matrix* d_u, Vector* grad) const = 0;
  virtual std::unique_ptr<Dynamics> Clone() const = 0;

  Vector Predict(const Vector& x, const Vector& u) const {
    return Predict(Matrix(x), Matrix(u)).col(0);
  }

 protected:
  void CheckInputs(const Matrix& x, const Matrix& u) const {
    if (x.rows() != state_dim() || u.rows() != action_dim() ||
        x.cols() != u.cols()) {
      throw ConfigError("dynamics input shape mismatch");
    }
  }
};

/// x' = A x + B u. Parameters [vec(A); vec(B)].
class LinearDynamics final : public Dynamics {
 public:
  LinearDynamics(const Matrix& a, const Matrix& b) : n_(a.rows()), m_(b.cols()) {
    if (a.cols() != n_ || b.rows() != n_) {
      throw ConfigError("LinearDynamics: A must be n x n and B n x m");
    }
    params_.resize(n_ * n_ + n_ * m_);
    A() = a;
    B() = b;
  }

  Index state_dim() const override { return n_; }
  Index action_dim() const override { return m_; }
  Vector& params() override { return params_; }
  const Vector& params() const override { return params_; }

  Eigen::Map<Matrix> A() { return {params_.data(), n_, n_}; }
  Eigen::Map<const Matrix> A() const { return {params_.data(), n_, n_}; }
  Eigen::Map<Matrix> B() { return {params_.data() + n_ * n_, n_, m_}; }
  Eigen::Map<const Matrix> B() const {
    return {params_.data() + n_ * n_, n_, m_};
  }

  Matrix Predict(const Matrix& x, const Matrix& u,
                 Trace* trace = nullptr) const override {
    CheckInputs(x, u);
    if (trace) trace->values = {x, u};
    Matrix y = A() * x;
    y.noalias() += B() * u;
    return y;
  }

  void Backward(const Trace& trace, const Matrix& d_next, Matrix* d_x,
                Matrix* d_u, Vector* grad) const override {
    if (d_x) *d_x = A().transpose() * d_next;
    if (d_u) *d_u = B().transpose() * d_next;
    if (grad) {
      Eigen::Map<Matrix> ga(grad->data(), n_, n_);
      Eigen::Map<Matrix> gb(grad->data() + n_ * n_, n_, m_);
      ga.noalias() += d_next * trace.values[0].transpose();
      gb.noalias() += d_next * trace.values[1].transpose();
    }
  }

  std::unique_ptr<Dynamics> Clone() const override {
    return std::make_unique<LinearDynamics>(*this);
  }

 private:
  Index n_;
  Index m_;
  Vector params_;
};

/// Neural model x' = x + net([x; u]) (residual form) or x' = net([x; u]).
class MlpDynamics final : public Dynamics {
 public:
  MlpDynamics(Index n, Index m, const std::vector<Index>& hidden,
              bool residual = true)
      : n_(n), m_(m), residual_(residual), net_(Widths(n, m, hidden)) {}

  Index state_dim() const override { return n_; }
  Index action_dim() const override { return m_; }
  Vector& params() override { return net_.params(); }
  const Vector& params() const override { return net_.params(); }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

  Matrix Predict(const Matrix& x, const Matrix& u,
                 Trace* trace = nullptr) const override {
    CheckInputs(x, u);
    Matrix in(n_ + m_, x.cols());
    in.topRows(n_) = x;
    in.bottomRows(m_) = u;
    Matrix y = net_.Forward(in, trace);
    if (residual_) y += x;
    return y;
  }

  void Backward(const Trace& trace, const Matrix& d_next, Matrix* d_x,
                Matrix* d_u, Vector* grad) const override {
    Matrix d_in = grad ? net_.Backward(trace, d_next, *grad)
                       : net_.BackwardInput(trace, d_next);
    if (d_x) {
      *d_x = d_in.topRows(n_);
      if (residual_) *d_x += d_next;
    }
    if (d_u) *d_u = d_in.bottomRows(m_);
  }

  std::unique_ptr<Dynamics> Clone() const override {
    return std::make_unique<MlpDynamics>(*this);
  }

 private:
  static std::vector<Index> Widths(Index n, Index m,
                                   const std::vector<Index>& hidden) {
    std::vector<Index> w{n + m};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(n);
    return w;
  }

  Index n_;
  Index m_;
  bool residual_;
  Mlp net_;
};

// ---------------------------------------------------------------------------
// Fictitious controller mu(x)

class Controller {
 public:
  virtual ~Controller() = default;
  virtual Index state_dim() const = 0;
  virtual Index action_dim() const = 0;
  virtual Vector& params() = 0;
  virtual const Vector& params() const = 0;
  Index num_params() const { return params().size(); }

  virtual Matrix Act(const Matrix& x, Trace* trace = nullptr) const = 0;
  /// Returns the gradient w.r.t. x; accumulates parameter gradients.
  virtual Matrix Backward(const Trace& trace, const Matrix& d_u,
                          Vector* grad) const = 0;
  virtual std::unique_ptr<Controller> Clone() const = 0;

  Vector Act(const Vector& x) const { return Act(Matrix(x)).col(0); }
};

/// mu(x) = -K x. Parameters vec(K).
class LinearGainController final : public Controller {
 public:
  using Controller::Act;
  explicit LinearGainController(const Matrix& k)
      : m_(k.rows()), n_(k.cols()), params_(Eigen::Map<const Vector>(k.data(), k.size())) {}

  Index state_dim() const override { return n_; }
  Index action_dim() const override { return m_; }
  Vector& params() override { return params_; }
  const Vector& params() const override { return params_; }
  Eigen::Map<Matrix> K() { return {params_.data(), m_, n_}; }
  Eigen::Map<const Matrix> K() const { return {params_.data(), m_, n_}; }

  Matrix Act(const Matrix& x, Trace* trace = nullptr) const override {
    if (x.rows() != n_) throw ConfigError("controller input width mismatch");
    if (trace) trace->values = {x};
    return -(K() * x);
  }

  Matrix Backward(const Trace& trace, const Matrix& d_u,
                  Vector* grad) const override {
    if (grad) {
      Eigen::Map<Matrix> gk(grad->data(), m_, n_);
      gk.noalias() -= d_u * trace.values[0].transpose();
    }
    return -(K().transpose() * d_u);
  }

  std::unique_ptr<Controller> Clone() const override {
    return std::make_unique<LinearGainController>(*this);
  }

 private:
  Index m_;
  Index n_;
  Vector params_;
};

/// ReLU network whose tanh output is scaled into the action box, so every
/// output satisfies the action constraint by construction.
class MlpController final : public Controller {
 public:
  using Controller::Act;
  MlpController(Index n, const std::vector<Index>& hidden, BoxConstraint box)
      : box_(std::move(box)),
        center_(box_.center()),
        half_(box_.half_width()),
        net_(Widths(n, box_.dim(), hidden), Activation::kRelu,
             Activation::kTanh) {}

  Index state_dim() const override { return net_.input_dim(); }
  Index action_dim() const override { return box_.dim(); }
  Vector& params() override { return net_.params(); }
  const Vector& params() const override { return net_.params(); }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  const BoxConstraint& box() const { return box_; }

  Matrix Act(const Matrix& x, Trace* trace = nullptr) const override {
    Matrix z = net_.Forward(x, trace);
    Matrix u = (z.array().colwise() * half_.array()).matrix();
    u.colwise() += center_;
    // tanh saturates to exactly +-1, which maps onto the closed box; clamp
    // guards the last ulp of center + half * 1.
    return u.cwiseMax(box_.lower().replicate(1, u.cols()))
        .cwiseMin(box_.upper().replicate(1, u.cols()));
  }

  Matrix Backward(const Trace& trace, const Matrix& d_u,
                  Vector* grad) const override {
    Matrix d_z = (d_u.array().colwise() * half_.array()).matrix();
    return grad ? net_.Backward(trace, d_z, *grad)
                : net_.BackwardInput(trace, d_z);
  }

  std::unique_ptr<Controller> Clone() const override {
    return std::make_unique<MlpController>(*this);
  }

 private:
  static std::vector<Index> Widths(Index n, Index m,
                                   const std::vector<Index>& hidden) {
    std::vector<Index> w{n};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(m);
    return w;
  }

  BoxConstraint box_;
  Vector center_;
  Vector half_;
  Mlp net_;
};

// ---------------------------------------------------------------------------
// Stage cost l(x, u)

/// How a component's native value is read: as a cost, or as a reward that
/// is negated before entering the MPC cost accumulation.
enum class Convention { kCost, kReward };

class StageCost {
 public:
  virtual ~StageCost() = default;
  virtual Vector& params() = 0;
  virtual const Vector& params() const = 0;
  Index num_params() const { return params().size(); }
  bool learnable() const { return learnable_; }
  void set_learnable(bool v) { learnable_ = v; }

  /// Cost-convention value per column.
  virtual RowVector Cost(const Matrix& x, const Matrix& u) const = 0;
  /// Gradients of sum_b w_b * cost_b. d_x / d_u are accumulated (+=).
  virtual void Backward(const Matrix& x, const Matrix& u, const RowVector& w,
                        Matrix* d_x, Matrix* d_u, Vector* grad) const = 0;
  virtual std::unique_ptr<StageCost> Clone() const = 0;

  double Cost(const Vector& x, const Vector& u) const {
    return Cost(Matrix(x), Matrix(u))(0);
  }

 private:
  bool learnable_ = false;
};

/// Native value x'Mx + u'Ru. Parameters [vec(M); vec(R)], kept symmetric.
class QuadraticStageCost final : public StageCost {
 public:
  using StageCost::Cost;
  QuadraticStageCost(const Matrix& m, const Matrix& r,
                     Convention convention = Convention::kCost)
      : n_(m.rows()), m_(r.rows()), sign_(convention == Convention::kCost ? 1.0 : -1.0) {
    if (m.cols() != n_ || r.cols() != m_) {
      throw ConfigError("QuadraticStageCost: M and R must be square");
    }
    params_.resize(n_ * n_ + m_ * m_);
    M() = internal::Sym(m);
    R() = internal::Sym(r);
  }

  Vector& params() override { return params_; }
  const Vector& params() const override { return params_; }
  Eigen::Map<Matrix> M() { return {params_.data(), n_, n_}; }
  Eigen::Map<const Matrix> M() const { return {params_.data(), n_, n_}; }
  Eigen::Map<Matrix> R() { return {params_.data() + n_ * n_, m_, m_}; }
  Eigen::Map<const Matrix> R() const {
    return {params_.data() + n_ * n_, m_, m_};
  }

  RowVector Cost(const Matrix& x, const Matrix& u) const override {
    return sign_ * (internal::QuadForms(M(), x) + internal::QuadForms(R(), u));
  }

  void Backward(const Matrix& x, const Matrix& u, const RowVector& w,
                Matrix* d_x, Matrix* d_u, Vector* grad) const override {
    const RowVector sw = sign_ * w;
    if (d_x) *d_x += 2.0 * (M() * x) * sw.asDiagonal();
    if (d_u) *d_u += 2.0 * (R() * u) * sw.asDiagonal();
    if (grad) {
      // d/dM of x'Mx for symmetric M parameterized by its entries; the
      // gradient is symmetric so updates keep M symmetric.
      Eigen::Map<Matrix> gm(grad->data(), n_, n_);
      Eigen::Map<Matrix> gr(grad->data() + n_ * n_, m_, m_);
      gm.noalias() += x * sw.asDiagonal() * x.transpose();
      gr.noalias() += u * sw.asDiagonal() * u.transpose();
    }
  }

  std::unique_ptr<StageCost> Clone() const override {
    return std::make_unique<QuadraticStageCost>(*this);
  }

 private:
  Index n_;
  Index m_;
  double sign_;
  Vector params_;
};

/// Native value exp(-(goal - x[coord])^2 / (2 sigma2)), a reward in (0, 1].
class GaussianStageCost final : public StageCost {
 public:
  using StageCost::Cost;
  GaussianStageCost(double goal, double sigma2, Index coord,
                    Convention convention = Convention::kReward)
      : goal_(goal),
        sigma2_(sigma2),
        coord_(coord),
        sign_(convention == Convention::kCost ? 1.0 : -1.0) {
    if (!(sigma2 > 0.0)) throw ConfigError("Gaussian width must be positive");
    if (coord < 0) throw ConfigError("Gaussian coordinate must be >= 0");
  }

  Vector& params() override { return params_; }
  const Vector& params() const override { return params_; }
  double goal() const { return goal_; }
  double sigma2() const { return sigma2_; }
  Index coord() const { return coord_; }

  RowVector Native(const Matrix& x) const {
    if (coord_ >= x.rows()) throw ConfigError("Gaussian coordinate out of range");
    return (-(x.row(coord_).array() - goal_).square() / (2.0 * sigma2_)).exp();
  }

  RowVector Cost(const Matrix& x, const Matrix&) const override {
    return sign_ * Native(x);
  }

  void Backward(const Matrix& x, const Matrix&, const RowVector& w,
                Matrix* d_x, Matrix*, Vector*) const override {
    if (!d_x) return;
    const RowVector g = Native(x).array() *
                        (goal_ - x.row(coord_).array()) / sigma2_;
    d_x->row(coord_).array() += sign_ * (w.array() * g.array());
  }

  std::unique_ptr<StageCost> Clone() const override {
    return std::make_unique<GaussianStageCost>(*this);
  }

 private:
  double goal_;
  double sigma2_;
  Index coord_;
  double sign_;
  Vector params_;
};

// ---------------------------------------------------------------------------
// Terminal value V(x)

class Terminal {
 public:
  virtual ~Terminal() = default;
  virtual Vector& params() = 0;
  virtual const Vector& params() const = 0;
  Index num_params() const { return params().size(); }

  /// Cost-convention value per column. `mu` is only consulted by terminals
  /// that evaluate a critic at the controller's action.
  virtual RowVector Value(const Matrix& x, const Controller* mu,
                          Trace* trace) const = 0;
  /// Overwrites d_x; accumulates parameter gradients into grad and, for
  /// controller-dependent terminals, controller gradients into mu_grad.
  virtual void Backward(const Trace& trace, const RowVector& w, Matrix* d_x,
                        Vector* grad, const Controller* mu,
                        Vector* mu_grad) const = 0;
  virtual bool uses_controller() const { return false; }
  virtual std::unique_ptr<Terminal> Clone() const = 0;

  double Value(const Vector& x, const Controller* mu = nullptr) const {
    Trace t;
    return Value(Matrix(x), mu, &t)(0);
  }
};

/// V(x) = x'Px with P = (W + W')/2 (kSymmetric) or P = W'W (kFactored).
class QuadraticTerminal final : public Terminal {
 public:
  using Terminal::Value;
  enum class Form { kSymmetric, kFactored };

  explicit QuadraticTerminal(const Matrix& w, Form form = Form::kSymmetric)
      : n_(w.rows()), form_(form), params_(Eigen::Map<const Vector>(w.data(), w.size())) {
    if (w.cols() != n_) throw ConfigError("terminal matrix must be square");
  }

  Vector& params() override { return params_; }
  const Vector& params() const override { return params_; }
  Form form() const { return form_; }
  Eigen::Map<Matrix> W() { return {params_.data(), n_, n_}; }
  Eigen::Map<const Matrix> W() const { return {params_.data(), n_, n_}; }

  /// Effective (symmetric) matrix.
  Matrix P() const {
    return form_ == Form::kSymmetric ? internal::Sym(W())
                                     : Matrix(W().transpose() * W());
  }

  RowVector Value(const Matrix& x, const Controller*,
                  Trace* trace) const override {
    if (x.rows() != n_) throw ConfigError("terminal input width mismatch");
    const Matrix p = P();
    Matrix px = p * x;
    if (trace) trace->values = {x, px};
    return (x.array() * px.array()).colwise().sum();
  }

  void Backward(const Trace& trace, const RowVector& w, Matrix* d_x,
                Vector* grad, const Controller*, Vector*) const override {
    const Matrix& x = trace.values[0];
    const Matrix& px = trace.values[1];
    if (d_x) *d_x = 2.0 * px * w.asDiagonal();
    if (grad) {
      const Matrix g = x * w.asDiagonal() * x.transpose();  // dJ/dP
      Eigen::Map<Matrix> gw(grad->data(), n_, n_);
      if (form_ == Form::kSymmetric) {
        gw += g;
      } else {
        gw.noalias() += 2.0 * W() * g;
      }
    }
  }

  std::unique_ptr<Terminal> Clone() const override {
    return std::make_unique<QuadraticTerminal>(*this);
  }

 private:
  Index n_;
  Form form_;
  Vector params_;
};

/// V(x) = net(x), scalar output, cost convention.
class MlpTerminal final : public Terminal {
 public:
  using Terminal::Value;
  MlpTerminal(Index n, const std::vector<Index>& hidden) : net_(Widths(n, hidden)) {}

  Vector& params() override { return net_.params(); }
  const Vector& params() const override { return net_.params(); }
  Mlp& net() { return net_; }

  RowVector Value(const Matrix& x, const Controller*,
                  Trace* trace) const override {
    return net_.Forward(x, trace).row(0);
  }

  void Backward(const Trace& trace, const RowVector& w, Matrix* d_x,
                Vector* grad, const Controller*, Vector*) const override {
    Matrix d = grad ? net_.Backward(trace, w, *grad)
                    : net_.BackwardInput(trace, w);
    if (d_x) *d_x = std::move(d);
  }

  std::unique_ptr<Terminal> Clone() const override {
    return std::make_unique<MlpTerminal>(*this);
  }

 private:
  static std::vector<Index> Widths(Index n, const std::vector<Index>& hidden) {
    std::vector<Index> w{n};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(1);
    return w;
  }

  Mlp net_;
};

/// Wraps an external reward-convention critic Q(x, u):
/// V(x) = -Q(x, mu(x)). The critic network is shared with its owner.
class CriticTerminal final : public Terminal {
 public:
  using Terminal::Value;
  explicit CriticTerminal(std::shared_ptr<Mlp> critic)
      : critic_(std::move(critic)) {
    if (!critic_ || critic_->output_dim() != 1) {
      throw ConfigError("critic terminal needs a scalar-output network");
    }
  }

  Vector& params() override { return critic_->params(); }
  const Vector& params() const override { return critic_->params(); }
  bool uses_controller() const override { return true; }
  const std::shared_ptr<Mlp>& critic() const { return critic_; }
  void set_critic(std::shared_ptr<Mlp> critic) { critic_ = std::move(critic); }

  RowVector Value(const Matrix& x, const Controller* mu,
                  Trace* trace) const override {
    if (!mu) throw ConfigError("critic terminal requires a controller");
    Trace local;
    Trace* t = trace ? trace : &local;
    t->values.assign(1, x);
    t->children.resize(2);
    const Matrix u = mu->Act(x, &t->children[0]);
    Matrix in(x.rows() + u.rows(), x.cols());
    in.topRows(x.rows()) = x;
    in.bottomRows(u.rows()) = u;
    return -critic_->Forward(in, &t->children[1]).row(0);
  }

  void Backward(const Trace& trace, const RowVector& w, Matrix* d_x,
                Vector* grad, const Controller* mu,
                Vector* mu_grad) const override {
    const Index n = trace.values[0].rows();
    const Matrix neg_w = -w;
    Matrix d_in = grad ? critic_->Backward(trace.children[1], neg_w, *grad)
                       : critic_->BackwardInput(trace.children[1], neg_w);
    Matrix d_from_mu =
        mu->Backward(trace.children[0], d_in.bottomRows(d_in.rows() - n), mu_grad);
    if (d_x) *d_x = d_in.topRows(n) + d_from_mu;
  }

  std::unique_ptr<Terminal> Clone() const override {
    return std::make_unique<CriticTerminal>(std::make_shared<Mlp>(*critic_));
  }

 private:
  std::shared_ptr<Mlp> critic_;
};

}  // namespace mpcritic
