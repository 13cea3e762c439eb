// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fod/autograd.hpp"

namespace fod {

struct AdamConfig;

/// A named trainable tensor with its gradient and Adam moment estimates.
///
/// Copying a Param deep-copies its value and optimizer state into a fresh leaf.
class Param {
 public:
  Param() = default;
  Param(std::string name, Tensor value);
  Param(const Param& other);
  Param& operator=(const Param& other);
  Param(Param&&) noexcept = default;
  Param& operator=(Param&&) noexcept = default;

  const std::string& name() const noexcept { return name_; }
  const Var& var() const noexcept { return var_; }
  const Tensor& value() const { return var_.value(); }
  Tensor& mutable_value() { return var_.node()->value; }
  /// Accumulated gradient; zeros when nothing has flowed in yet.
  Tensor grad() const;
  bool has_grad() const { return !var_.grad().empty(); }
  void zero_grad();
  /// Adds g into the accumulated gradient.
  void add_grad(const Tensor& g);

  const Tensor& adam_m() const noexcept { return m_; }
  const Tensor& adam_v() const noexcept { return v_; }
  std::int64_t step_count() const noexcept { return steps_; }

  friend void adam_step(Param& p, const AdamConfig& cfg);

 private:
  std::string name_;
  Var var_;
  Tensor m_, v_;
  std::int64_t steps_ = 0;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline constexpr double kDefaultLearningRate = 1e-4;

/// One bias-corrected Adam update; zeroes the gradient afterwards.
/// Throws NumericError naming the parameter when its gradient is not finite.
void adam_step(Param& p, const AdamConfig& cfg);
void adam_step(Param& p, double lr = kDefaultLearningRate);

struct GradMismatch {
  std::string param;
  std::size_t index;
  double analytic;
  double numeric;
  double rel_err;
};

struct GradCheckReport {
  std::vector<GradMismatch> mismatches;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  bool ok() const noexcept { return mismatches.empty(); }
};

/// Compares reverse-mode gradients with central differences for every entry of
/// every parameter. stop_gradient calls are frozen to their first-pass values
/// in the numeric evaluations, so both paths treat them as constants.
///
/// An entry passes when |a - n| <= tol * max(|a|, |n|) or |a - n| <= abs_floor.
GradCheckReport gradient_check(const std::function<Var()>& loss_fn, std::span<Param* const> params,
                               double h = 1e-5, double tol = 1e-4, double abs_floor = 1e-9);

}  // namespace fod
