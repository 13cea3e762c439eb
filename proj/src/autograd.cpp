// SPDX-License-Identifier: Apache-2.0
#include "fod/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "fod/errors.hpp"

namespace fod {

namespace {

thread_local StopGradientFreeze* g_freeze = nullptr;

Node& in(Node& self, std::size_t i) { return *self.inputs[i]; }

Tensor elementwise(const Tensor& a, const Tensor& b, const char* what, auto&& f) {
  require_same_shape(a, b, what);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

Tensor map(const Tensor& a, auto&& f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

double Var::item() const {
  if (value().numel() != 1)
    throw DimensionError("item(): tensor has " + std::to_string(value().numel()) + " elements");
  return value()[0];
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var leaf(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

Var make_node(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& v : inputs) n->requires_grad = n->requires_grad || v.requires_grad();
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (auto& v : inputs) n->inputs.push_back(v.ptr());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

void accumulate(Node& n, const Tensor& g) {
  if (!n.requires_grad) return;
  if (n.grad.empty())
    n.grad = g;
  else
    n.grad += g;
}

void accumulate(Node& n, Tensor&& g) {
  if (!n.requires_grad) return;
  if (n.grad.empty())
    n.grad = std::move(g);
  else
    n.grad += g;
}

void backward(const Var& root) {
  if (!root) throw UsageError("backward on empty Var");
  if (root.value().numel() != 1) throw DimensionError("backward root must have exactly one element");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (!n->is_leaf()) n->grad = Tensor();
  root.node()->grad = Tensor(root.value().shape(), 1.0);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf() || n->grad.empty() || !n->backward) continue;
    n->backward(*n);
  }
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  return make_node(matmul_nn(a.value(), b.value()), {a, b}, [](Node& self) {
    Node& A = in(self, 0);
    Node& B = in(self, 1);
    if (A.requires_grad) accumulate(A, matmul_nt(self.grad, B.value));
    if (B.requires_grad) accumulate(B, matmul_tn(A.value, self.grad));
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  return make_node(fod::matmul_nt(a.value(), b.value()), {a, b}, [](Node& self) {
    Node& A = in(self, 0);
    Node& B = in(self, 1);
    if (A.requires_grad) accumulate(A, matmul_nn(self.grad, B.value));
    if (B.requires_grad) accumulate(B, matmul_tn(self.grad, A.value));
  });
}

Var add(const Var& a, const Var& b) {
  return make_node(elementwise(a.value(), b.value(), "add", std::plus<>{}), {a, b}, [](Node& self) {
    accumulate(in(self, 0), self.grad);
    accumulate(in(self, 1), self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  return make_node(elementwise(a.value(), b.value(), "sub", std::minus<>{}), {a, b}, [](Node& self) {
    accumulate(in(self, 0), self.grad);
    if (in(self, 1).requires_grad) accumulate(in(self, 1), map(self.grad, [](double g) { return -g; }));
  });
}

Var mul(const Var& a, const Var& b) {
  return make_node(elementwise(a.value(), b.value(), "mul", std::multiplies<>{}), {a, b}, [](Node& self) {
    Node& A = in(self, 0);
    Node& B = in(self, 1);
    if (A.requires_grad) accumulate(A, elementwise(self.grad, B.value, "mul", std::multiplies<>{}));
    if (B.requires_grad) accumulate(B, elementwise(self.grad, A.value, "mul", std::multiplies<>{}));
  });
}

Var div(const Var& a, const Var& b) {
  return make_node(elementwise(a.value(), b.value(), "div", std::divides<>{}), {a, b}, [](Node& self) {
    Node& A = in(self, 0);
    Node& B = in(self, 1);
    if (A.requires_grad) accumulate(A, elementwise(self.grad, B.value, "div", std::divides<>{}));
    if (B.requires_grad) {
      Tensor g(B.value.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] = -self.grad[i] * self.value[i] / B.value[i];
      accumulate(B, std::move(g));
    }
  });
}

Var scale(const Var& a, double c) {
  return make_node(map(a.value(), [c](double x) { return c * x; }), {a}, [c](Node& self) {
    accumulate(in(self, 0), map(self.grad, [c](double g) { return c * g; }));
  });
}

Var add_scalar(const Var& a, double c) {
  return make_node(map(a.value(), [c](double x) { return x + c; }), {a},
                   [](Node& self) { accumulate(in(self, 0), self.grad); });
}

Var exp(const Var& a) {
  return make_node(map(a.value(), [](double x) { return std::exp(x); }), {a}, [](Node& self) {
    accumulate(in(self, 0), elementwise(self.grad, self.value, "exp", std::multiplies<>{}));
  });
}

Var gelu(const Var& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  auto f = [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); };
  return make_node(map(a.value(), f), {a}, [](Node& self) {
    const Tensor& x = in(self, 0).value;
    Tensor g(x.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double xi = x[i];
      const double t = std::tanh(c * (xi + k * xi * xi * xi));
      const double d = 0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * c * (1.0 + 3.0 * k * xi * xi);
      g[i] = self.grad[i] * d;
    }
    accumulate(in(self, 0), std::move(g));
  });
}

Var log_clamped(const Var& a, double floor) {
  return make_node(map(a.value(), [floor](double x) { return std::log(std::max(x, floor)); }), {a},
                   [floor](Node& self) {
                     const Tensor& x = in(self, 0).value;
                     Tensor g(x.shape());
                     for (std::size_t i = 0; i < g.numel(); ++i)
                       g[i] = x[i] > floor ? self.grad[i] / x[i] : 0.0;
                     accumulate(in(self, 0), std::move(g));
                   });
}

Var clamp_min(const Var& a, double floor) {
  return make_node(map(a.value(), [floor](double x) { return std::max(x, floor); }), {a},
                   [floor](Node& self) {
                     const Tensor& x = in(self, 0).value;
                     Tensor g(x.shape());
                     for (std::size_t i = 0; i < g.numel(); ++i) g[i] = x[i] > floor ? self.grad[i] : 0.0;
                     accumulate(in(self, 0), std::move(g));
                   });
}

Var add_row(const Var& a, const Var& bias) {
  const Tensor& av = a.value();
  require_rank2(av, "add_row");
  const std::size_t n = av.rows(), m = av.cols();
  if (bias.value().numel() != m)
    throw DimensionError("add_row: bias has " + std::to_string(bias.value().numel()) + " elements, expected " +
                         std::to_string(m));
  Tensor out = av;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) += bias.value()[j];
  return make_node(std::move(out), {a, bias}, [n, m](Node& self) {
    accumulate(in(self, 0), self.grad);
    Node& B = in(self, 1);
    if (B.requires_grad) {
      Tensor g(B.value.shape());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g[j] += self.grad.at(i, j);
      accumulate(B, std::move(g));
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return make_node(Tensor::scalar(s), {a}, [](Node& self) {
    accumulate(in(self, 0), Tensor(in(self, 0).value.shape(), self.grad[0]));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().numel());
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return make_node(Tensor::scalar(s / n), {a}, [n](Node& self) {
    accumulate(in(self, 0), Tensor(in(self, 0).value.shape(), self.grad[0] / n));
  });
}

Var row_sum(const Var& a) {
  const Tensor& av = a.value();
  require_rank2(av, "row_sum");
  Tensor out(Shape{av.rows()});
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double s = 0.0;
    for (double x : av.row(i)) s += x;
    out[i] = s;
  }
  return make_node(std::move(out), {a}, [](Node& self) {
    const Tensor& x = in(self, 0).value;
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) g.at(i, j) = self.grad[i];
    accumulate(in(self, 0), std::move(g));
  });
}

Var row_dot(const Var& a, const Var& b) {
  require_rank2(a.value(), "row_dot");
  require_same_shape(a.value(), b.value(), "row_dot");
  const std::size_t n = a.value().rows();
  Tensor out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    auto ra = a.value().row(i);
    auto rb = b.value().row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < ra.size(); ++j) s += ra[j] * rb[j];
    out[i] = s;
  }
  return make_node(std::move(out), {a, b}, [](Node& self) {
    Node& A = in(self, 0);
    Node& B = in(self, 1);
    auto grad_for = [&](const Tensor& other) {
      Tensor g(other.shape());
      for (std::size_t i = 0; i < other.rows(); ++i)
        for (std::size_t j = 0; j < other.cols(); ++j) g.at(i, j) = self.grad[i] * other.at(i, j);
      return g;
    };
    if (A.requires_grad) accumulate(A, grad_for(B.value));
    if (B.requires_grad) accumulate(B, grad_for(A.value));
  });
}

Var row_norm(const Var& a) {
  require_rank2(a.value(), "row_norm");
  const std::size_t n = a.value().rows();
  Tensor out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double x : a.value().row(i)) s += x * x;
    out[i] = std::sqrt(s);
  }
  return make_node(std::move(out), {a}, [](Node& self) {
    const Tensor& x = in(self, 0).value;
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double norm = self.value[i];
      if (norm == 0.0) continue;
      for (std::size_t j = 0; j < x.cols(); ++j) g.at(i, j) = self.grad[i] * x.at(i, j) / norm;
    }
    accumulate(in(self, 0), std::move(g));
  });
}

Var softmax_rows(const Var& a) {
  const Tensor& x = a.value();
  require_rank2(x, "softmax_rows");
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xi = x.row(i);
    auto yi = y.row(i);
    const double mx = *std::max_element(xi.begin(), xi.end());
    double s = 0.0;
    for (std::size_t j = 0; j < xi.size(); ++j) s += (yi[j] = std::exp(xi[j] - mx));
    for (auto& v : yi) v /= s;
  }
  return make_node(std::move(y), {a}, [](Node& self) {
    const Tensor& y = self.value;
    Tensor g(y.shape());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      auto yi = y.row(i);
      auto gi = self.grad.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < yi.size(); ++j) dot += gi[j] * yi[j];
      for (std::size_t j = 0; j < yi.size(); ++j) g.at(i, j) = yi[j] * (gi[j] - dot);
    }
    accumulate(in(self, 0), std::move(g));
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta) {
  const Tensor& xv = x.value();
  require_rank2(xv, "layer_norm");
  const std::size_t n = xv.rows(), d = xv.cols();
  if (d < 2) throw DimensionError("layer_norm: feature width must be >= 2");
  if (gamma.value().numel() != d || beta.value().numel() != d)
    throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(d) + " elements");

  Tensor xhat(xv.shape());
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = xv.row(i);
    double mu = 0.0;
    for (double v : r) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : r) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) xhat.at(i, j) = (r[j] - mu) * inv_std[i];
  }
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) y.at(i, j) = xhat.at(i, j) * gamma.value()[j] + beta.value()[j];

  return make_node(std::move(y), {x, gamma, beta},
                   [xhat = std::move(xhat), inv_std = std::move(inv_std), n, d](Node& self) {
                     Node& X = in(self, 0);
                     Node& G = in(self, 1);
                     Node& B = in(self, 2);
                     const Tensor& dy = self.grad;
                     if (G.requires_grad || B.requires_grad) {
                       Tensor dg(G.value.shape()), db(B.value.shape());
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < d; ++j) {
                           dg[j] += dy.at(i, j) * xhat.at(i, j);
                           db[j] += dy.at(i, j);
                         }
                       accumulate(G, std::move(dg));
                       accumulate(B, std::move(db));
                     }
                     if (X.requires_grad) {
                       Tensor dx(X.value.shape());
                       const double inv_d = 1.0 / static_cast<double>(d);
                       for (std::size_t i = 0; i < n; ++i) {
                         double m1 = 0.0, m2 = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double dxh = dy.at(i, j) * G.value[j];
                           m1 += dxh;
                           m2 += dxh * xhat.at(i, j);
                         }
                         m1 *= inv_d;
                         m2 *= inv_d;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double dxh = dy.at(i, j) * G.value[j];
                           dx.at(i, j) = inv_std[i] * (dxh - m1 - xhat.at(i, j) * m2);
                         }
                       }
                       accumulate(X, std::move(dx));
                     }
                   });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t n = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.value().rows() != n) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor out(Shape{n, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out.at(i, off + j) = parts[k].value().at(i, j);
    off += widths[k];
  }
  return make_node(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                   [widths = std::move(widths), n](Node& self) {
                     std::size_t off = 0;
                     for (std::size_t k = 0; k < widths.size(); ++k) {
                       Node& P = in(self, k);
                       if (P.requires_grad) {
                         Tensor g(Shape{n, widths[k]});
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < widths[k]; ++j) g.at(i, j) = self.grad.at(i, off + j);
                         accumulate(P, std::move(g));
                       }
                       off += widths[k];
                     }
                   });
}

Var average(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("average: no inputs");
  Tensor out(parts[0].value().shape());
  for (const auto& p : parts) {
    require_same_shape(out, p.value(), "average");
    out += p.value();
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  for (auto& v : out.data()) v *= inv;
  return make_node(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [inv](Node& self) {
    Tensor g = map(self.grad, [inv](double x) { return x * inv; });
    for (auto& p : self.inputs) accumulate(*p, g);
  });
}

Var gather_rows(const Var& a, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  require_rank2(av, "gather_rows");
  const std::size_t m = av.cols();
  if (rows.empty()) throw DimensionError("gather_rows: no rows requested");
  Tensor out(Shape{rows.size(), m});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= av.rows()) throw DimensionError("gather_rows: index out of range");
    for (std::size_t j = 0; j < m; ++j) out.at(r, j) = av.at(rows[r], j);
  }
  return make_node(std::move(out), {a}, [idx = std::vector<std::size_t>(rows.begin(), rows.end()), m](Node& self) {
    Node& A = in(self, 0);
    Tensor g(A.value.shape());
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < m; ++j) g.at(idx[r], j) += self.grad.at(r, j);
    accumulate(A, std::move(g));
  });
}

// ---------------------------------------------------------------------------

Var stop_gradient(const Var& x) {
  if (g_freeze) {
    StopGradientFreeze& f = *g_freeze;
    if (f.mode_ == StopGradientFreeze::Mode::record) {
      f.tape_.push_back(x.value());
    } else {
      if (f.cursor_ >= f.tape_.size())
        throw UsageError("stop_gradient replay: more calls than were recorded");
      const Tensor& frozen = f.tape_[f.cursor_++];
      require_same_shape(frozen, x.value(), "stop_gradient replay");
      return constant(frozen);
    }
  }
  return constant(x.value());
}

StopGradientFreeze::StopGradientFreeze() : previous_(g_freeze) { g_freeze = this; }

StopGradientFreeze::~StopGradientFreeze() { g_freeze = previous_; }

void StopGradientFreeze::set_mode(Mode m) {
  mode_ = m;
  cursor_ = 0;
}

}  // namespace fod
