// SPDX-License-Identifier: Apache-2.0
#include "fod/optim.hpp"

#include <algorithm>
#include <cmath>

#include "fod/errors.hpp"

namespace fod {

Param::Param(std::string name, Tensor value)
    : name_(std::move(name)), m_(value.shape()), v_(value.shape()) {
  var_ = leaf(std::move(value));
}

Param::Param(const Param& other)
    : name_(other.name_), m_(other.m_), v_(other.v_), steps_(other.steps_) {
  if (other.var_) {
    var_ = leaf(other.value());
    var_.node()->grad = other.var_.grad();
  }
}

Param& Param::operator=(const Param& other) {
  if (this != &other) {
    Param tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

Tensor Param::grad() const {
  if (var_.grad().empty()) return Tensor(value().shape());
  return var_.grad();
}

void Param::zero_grad() { var_.node()->grad = Tensor(); }

void Param::add_grad(const Tensor& g) { accumulate(*var_.node(), g); }

void adam_step(Param& p, const AdamConfig& cfg) {
  Tensor g = p.grad();
  if (!g.all_finite()) throw NumericError("non-finite gradient in parameter '" + p.name() + "'");
  ++p.steps_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.steps_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.steps_));
  Tensor& w = p.mutable_value();
  for (std::size_t i = 0; i < w.numel(); ++i) {
    p.m_[i] = cfg.beta1 * p.m_[i] + (1.0 - cfg.beta1) * g[i];
    p.v_[i] = cfg.beta2 * p.v_[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mhat = p.m_[i] / bc1;
    const double vhat = p.v_[i] / bc2;
    w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
  p.zero_grad();
}

void adam_step(Param& p, double lr) { adam_step(p, AdamConfig{.lr = lr}); }

GradCheckReport gradient_check(const std::function<Var()>& loss_fn, std::span<Param* const> params,
                               double h, double tol, double abs_floor) {
  GradCheckReport report;
  StopGradientFreeze freeze;

  for (Param* p : params) p->zero_grad();
  Var loss = loss_fn();
  backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad());
  for (Param* p : params) p->zero_grad();

  freeze.set_mode(StopGradientFreeze::Mode::replay);
  auto eval = [&] {
    freeze.set_mode(StopGradientFreeze::Mode::replay);
    return loss_fn().item();
  };

  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    Tensor& w = p.mutable_value();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double orig = w[i];
      w[i] = orig + h;
      const double fp = eval();
      w[i] = orig - h;
      const double fm = eval();
      w[i] = orig;
      const double num = (fp - fm) / (2.0 * h);
      const double ana = analytic[k][i];
      const double diff = std::abs(ana - num);
      const double scale = std::max(std::abs(ana), std::abs(num));
      const double rel = scale > 0.0 ? diff / scale : 0.0;
      ++report.checked;
      const bool pass = diff <= tol * scale || diff <= abs_floor;
      if (!pass) {
        report.mismatches.push_back({p.name(), i, ana, num, rel});
        report.max_rel_err = std::max(report.max_rel_err, rel);
      } else if (diff > abs_floor) {
        report.max_rel_err = std::max(report.max_rel_err, rel);
      }
    }
  }
  return report;
}

}  // namespace fod
