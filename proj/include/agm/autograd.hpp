// Copyright 2026 The AGM Authors. All Rights Reserved.
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

// A small reverse-mode automatic differentiation tape over Tensor values.
//
// Every op returns a Var (shared node). Nodes that do not depend on any
// parameter drop their parents and backward closure, so inference graphs
// cost nothing beyond their values. backward() walks the graph in reverse
// topological order and accumulates into Node::grad.

#ifndef AGM_AUTOGRAD_HPP_
#define AGM_AUTOGRAD_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "agm/common.hpp"
#include "agm/tensor.hpp"

namespace agm::ad {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor(value.shape, 0.0);
    return grad;
  }
  void zero_grad() {
    if (grad.size() == value.size()) std::fill(grad.data.begin(), grad.data.end(), 0.0);
  }
  double scalar() const { return value.data.at(0); }
};

using Var = std::shared_ptr<Node>;

inline Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return n;
}

inline Var parameter(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return n;
}

/// Builds an op node; the closure is kept only when some parent needs a
/// gradient.
inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p->requires_grad; });
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

inline Var detach(const Var& v) { return constant(v->value); }

/// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
/// Interior gradients are reset on each call; leaf gradients accumulate.
inline void backward(const Var& root) {
  if (root->value.size() != 1) fail(ErrorKind::kShape, "backward() needs a scalar root, got ", root->value.shape_str());
  if (!root->requires_grad) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (n->backward_fn) n->zero_grad();
  }
  root->ensure_grad().data[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

namespace detail {

inline Tensor& grad_of(const Var& v) { return v->ensure_grad(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops.

inline Var add(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = detail::grad_of(p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Var scale(const Var& a, double k) {
  Tensor out = a->value;
  for (auto& v : out.data) v *= k;
  return make_op(std::move(out), {a}, [k](Node& self) {
    auto& g = detail::grad_of(self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * self.grad[i];
  });
}

/// Weighted sum of scalar nodes.
inline Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights) {
  if (terms.size() != weights.size()) fail(ErrorKind::kShape, "weighted_sum: size mismatch");
  double total = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i]->value.size() != 1) fail(ErrorKind::kShape, "weighted_sum expects scalars");
    total += weights[i] * terms[i]->scalar();
  }
  return make_op(Tensor({1}, total), terms, [weights](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (!self.parents[i]->requires_grad) continue;
      detail::grad_of(self.parents[i])[0] += weights[i] * self.grad[0];
    }
  });
}

inline Var sum(const std::vector<Var>& terms) {
  return weighted_sum(terms, std::vector<double>(terms.size(), 1.0));
}

inline Var relu(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) v = v > 0 ? v : 0;
  return make_op(std::move(out), {a}, [](Node& self) {
    auto& g = detail::grad_of(self.parents[0]);
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0) g[i] += self.grad[i];
    }
  });
}

inline Var leaky_relu(const Var& a, double slope) {
  Tensor out = a->value;
  for (auto& v : out.data) v = v > 0 ? v : slope * v;
  return make_op(std::move(out), {a}, [slope](Node& self) {
    auto& g = detail::grad_of(self.parents[0]);
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += (x[i] > 0 ? 1.0 : slope) * self.grad[i];
  });
}

inline Var sigmoid(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  return make_op(std::move(out), {a}, [](Node& self) {
    auto& g = detail::grad_of(self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = self.value[i];
      g[i] += s * (1 - s) * self.grad[i];
    }
  });
}

/// Hard clamp; gradient passes only where the input lies strictly inside.
inline Var clamp(const Var& a, double lo, double hi) {
  Tensor out = a->value;
  for (auto& v : out.data) v = std::clamp(v, lo, hi);
  return make_op(std::move(out), {a}, [lo, hi](Node& self) {
    auto& g = detail::grad_of(self.parents[0]);
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > lo && x[i] < hi) g[i] += self.grad[i];
    }
  });
}

/// mean |a - b| over all elements.
inline Var mean_abs_diff(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "mean_abs_diff");
  const double n = static_cast<double>(a->value.size());
  double total = 0;
  for (std::size_t i = 0; i < a->value.size(); ++i) total += std::abs(a->value[i] - b->value[i]);
  return make_op(Tensor({1}, total / n), {a, b}, [n](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    const double g0 = self.grad[0] / n;
    for (int k = 0; k < 2; ++k) {
      if (!self.parents[k]->requires_grad) continue;
      auto& g = detail::grad_of(self.parents[k]);
      const double sign_k = k == 0 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double d = av[i] - bv[i];
        const double s = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
        g[i] += sign_k * s * g0;
      }
    }
  });
}

/// mean (a - target)^2 with a constant target value.
inline Var mean_sq_to(const Var& a, double target) {
  const double n = static_cast<double>(a->value.size());
  double total = 0;
  for (double v : a->value.data) total += (v - target) * (v - target);
  return make_op(Tensor({1}, total / n), {a}, [n, target](Node& self) {
    auto& g = detail::grad_of(self.parents[0]);
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * (x[i] - target) / n * self.grad[0];
  });
}

/// -mean log(clamp(a)) when `complement` is false, -mean log(1 - clamp(a))
/// otherwise. Scores are clamped to [floor, 1 - floor]; the clamp kills the
/// gradient outside that band.
inline Var mean_neg_log(const Var& a, bool complement, double floor = 1e-7) {
  const double n = static_cast<double>(a->value.size());
  double total = 0;
  for (double v : a->value.data) {
    const double s = std::clamp(v, floor, 1.0 - floor);
    total -= std::log(complement ? 1.0 - s : s);
  }
  return make_op(Tensor({1}, total / n), {a}, [n, complement, floor](Node& self) {
    auto& g = detail::grad_of(self.parents[0]);
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] < floor || x[i] > 1.0 - floor) continue;
      g[i] += (complement ? 1.0 / (1.0 - x[i]) : -1.0 / x[i]) / n * self.grad[0];
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix ops on [N, D] nodes.

/// x [N,D] times w^T, w [C,D] -> [N,C]. No bias.
inline Var linear(const Var& x, const Var& w) {
  if (x->value.rank() != 2 || w->value.rank() != 2 || x->value.dim(1) != w->value.dim(1)) {
    fail(ErrorKind::kShape, "linear: input ", x->value.shape_str(), " does not match weight ", w->value.shape_str());
  }
  Matrix out = x->value.as_matrix() * w->value.as_matrix().transpose();
  return make_op(Tensor::from_matrix(out), {x, w}, [](Node& self) {
    const auto dy = self.grad.as_matrix();
    if (self.parents[0]->requires_grad) {
      detail::grad_of(self.parents[0]).as_matrix().noalias() += dy * self.parents[1]->value.as_matrix();
    }
    if (self.parents[1]->requires_grad) {
      detail::grad_of(self.parents[1]).as_matrix().noalias() += dy.transpose() * self.parents[0]->value.as_matrix();
    }
  });
}

/// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    double s = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      p(r, c) = std::exp(logits(r, c) - m);
      s += p(r, c);
    }
    p.row(r) /= s;
  }
  return p;
}

inline Var softmax(const Var& logits) {
  if (logits->value.rank() != 2) fail(ErrorKind::kShape, "softmax expects [N,C]");
  Matrix p = softmax_rows(logits->value.as_matrix());
  return make_op(Tensor::from_matrix(p), {logits}, [](Node& self) {
    const auto p = self.value.as_matrix();
    const auto dp = self.grad.as_matrix();
    auto g = detail::grad_of(self.parents[0]).as_matrix();
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      const double dot = p.row(r).dot(dp.row(r));
      g.row(r).array() += p.row(r).array() * (dp.row(r).array() - dot);
    }
  });
}

/// Row-wise concatenation [N,D1] ++ [N,D2] -> [N,D1+D2].
inline Var concat_cols(const Var& a, const Var& b) {
  if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(0) != b->value.dim(0)) {
    fail(ErrorKind::kShape, "concat_cols: ", a->value.shape_str(), " vs ", b->value.shape_str());
  }
  const int n = a->value.dim(0), d1 = a->value.dim(1), d2 = b->value.dim(1);
  Matrix out(n, d1 + d2);
  out << a->value.as_matrix(), b->value.as_matrix();
  return make_op(Tensor::from_matrix(out), {a, b}, [d1, d2](Node& self) {
    const auto dy = self.grad.as_matrix();
    if (self.parents[0]->requires_grad) detail::grad_of(self.parents[0]).as_matrix() += dy.leftCols(d1);
    if (self.parents[1]->requires_grad) detail::grad_of(self.parents[1]).as_matrix() += dy.rightCols(d2);
  });
}

// ---------------------------------------------------------------------------
// Convolutional ops on NCHW nodes.

struct ConvGeometry {
  int n, c, h, w;      // input
  int o, k;            // output channels, square kernel
  int stride, pad;
  int ho, wo;          // output spatial size

  static ConvGeometry make(const Tensor& x, const Tensor& weight, int stride, int pad) {
    if (x.rank() != 4 || weight.rank() != 4) fail(ErrorKind::kShape, "conv2d expects 4-d input and weight");
    if (weight.dim(1) != x.dim(1) || weight.dim(2) != weight.dim(3)) {
      fail(ErrorKind::kShape, "conv2d: input ", x.shape_str(), " incompatible with weight ", weight.shape_str());
    }
    ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), stride, pad, 0, 0};
    g.ho = (g.h + 2 * pad - g.k) / stride + 1;
    g.wo = (g.w + 2 * pad - g.k) / stride + 1;
    if (g.ho < 1 || g.wo < 1) fail(ErrorKind::kShape, "conv2d: input ", x.shape_str(), " too small for kernel");
    return g;
  }
  int patch() const { return c * k * k; }
  int positions() const { return ho * wo; }
};

namespace detail {

// cols is [C*k*k, Ho*Wo] row-major.
inline void im2col(const double* x, const ConvGeometry& g, Matrix& cols) {
  cols.resize(g.patch(), g.positions());
  for (int c = 0; c < g.c; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        double* row = cols.data() + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * g.positions();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          double* dst = row + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

inline void col2im_add(const Matrix& cols, const ConvGeometry& g, double* dx) {
  for (int c = 0; c < g.c; ++c) {
    double* xc = dx + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const double* row = cols.data() + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * g.positions();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * g.wo;
          double* dst = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-d convolution (cross-correlation) with square kernels. `bias` may be
/// null.
inline Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  const ConvGeometry g = ConvGeometry::make(x->value, weight->value, stride, pad);
  Tensor out({g.n, g.o, g.ho, g.wo});
  Eigen::Map<const Matrix> wmat(weight->value.ptr(), g.o, g.patch());
  Matrix cols;
  for (int n = 0; n < g.n; ++n) {
    detail::im2col(x->value.ptr() + static_cast<std::size_t>(n) * g.c * g.h * g.w, g, cols);
    Eigen::Map<Matrix> y(out.ptr() + static_cast<std::size_t>(n) * g.o * g.positions(), g.o, g.positions());
    y.noalias() = wmat * cols;
    if (bias) {
      for (int o = 0; o < g.o; ++o) y.row(o).array() += bias->value[o];
    }
  }
  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make_op(std::move(out), std::move(parents), [g](Node& self) {
    const Var& xv = self.parents[0];
    const Var& wv = self.parents[1];
    Eigen::Map<const Matrix> wmat(wv->value.ptr(), g.o, g.patch());
    Matrix cols;
    Matrix dcols;
    for (int n = 0; n < g.n; ++n) {
      Eigen::Map<const Matrix> dy(self.grad.ptr() + static_cast<std::size_t>(n) * g.o * g.positions(), g.o,
                                  g.positions());
      if (wv->requires_grad) {
        detail::im2col(xv->value.ptr() + static_cast<std::size_t>(n) * g.c * g.h * g.w, g, cols);
        Eigen::Map<Matrix> dw(detail::grad_of(wv).ptr(), g.o, g.patch());
        dw.noalias() += dy * cols.transpose();
      }
      if (xv->requires_grad) {
        dcols.noalias() = wmat.transpose() * dy;
        detail::col2im_add(dcols, g, detail::grad_of(xv).ptr() + static_cast<std::size_t>(n) * g.c * g.h * g.w);
      }
      if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
        auto& db = detail::grad_of(self.parents[2]);
        for (int o = 0; o < g.o; ++o) db[o] += dy.row(o).sum();
      }
    }
  });
}

/// Running statistics of a batch-norm layer; updated in place during
/// training-mode forwards.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormStats(int channels = 0)
      : running_mean({channels}, 0.0), running_var({channels}, 1.0) {}
};

/// Per-channel batch normalization over (N, H, W) with affine gamma/beta.
inline Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, bool training) {
  const Tensor& xv = x->value;
  if (xv.rank() != 4 || gamma->value.size() != static_cast<std::size_t>(xv.dim(1))) {
    fail(ErrorKind::kShape, "batch_norm: input ", xv.shape_str(), " vs gamma ", gamma->value.shape_str());
  }
  const int n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  const double m = static_cast<double>(n) * hw;
  std::vector<double> mean(c), inv_std(c);
  for (int ch = 0; ch < c; ++ch) {
    if (training) {
      double s = 0, s2 = 0;
      for (int i = 0; i < n; ++i) {
        const double* p = xv.ptr() + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (int j = 0; j < hw; ++j) s += p[j];
      }
      const double mu = s / m;
      for (int i = 0; i < n; ++i) {
        const double* p = xv.ptr() + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (int j = 0; j < hw; ++j) s2 += (p[j] - mu) * (p[j] - mu);
      }
      const double var = s2 / m;
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + stats.eps);
      const double unbiased = m > 1 ? var * m / (m - 1) : var;
      stats.running_mean[ch] = (1 - stats.momentum) * stats.running_mean[ch] + stats.momentum * mu;
      stats.running_var[ch] = (1 - stats.momentum) * stats.running_var[ch] + stats.momentum * unbiased;
    } else {
      mean[ch] = stats.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(stats.running_var[ch] + stats.eps);
    }
  }
  Tensor xhat(xv.shape);
  Tensor out(xv.shape);
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (int j = 0; j < hw; ++j) {
        const double h = (xv[base + j] - mean[ch]) * inv_std[ch];
        xhat[base + j] = h;
        out[base + j] = gamma->value[ch] * h + beta->value[ch];
      }
    }
  }
  return make_op(std::move(out), {x, gamma, beta},
                 [xhat = std::move(xhat), inv_std, n, c, hw, m, training](Node& self) {
    const Var& xv = self.parents[0];
    const Var& gv = self.parents[1];
    std::vector<double> dgamma(c, 0.0), dbeta(c, 0.0);
    for (int i = 0; i < n; ++i) {
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
        for (int j = 0; j < hw; ++j) {
          dgamma[ch] += self.grad[base + j] * xhat[base + j];
          dbeta[ch] += self.grad[base + j];
        }
      }
    }
    if (gv->requires_grad) {
      auto& g = detail::grad_of(gv);
      for (int ch = 0; ch < c; ++ch) g[ch] += dgamma[ch];
    }
    if (self.parents[2]->requires_grad) {
      auto& g = detail::grad_of(self.parents[2]);
      for (int ch = 0; ch < c; ++ch) g[ch] += dbeta[ch];
    }
    if (!xv->requires_grad) return;
    auto& dx = detail::grad_of(xv);
    for (int i = 0; i < n; ++i) {
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
        const double gam = gv->value[ch];
        for (int j = 0; j < hw; ++j) {
          if (training) {
            dx[base + j] += gam * inv_std[ch] / m *
                            (m * self.grad[base + j] - dbeta[ch] - xhat[base + j] * dgamma[ch]);
          } else {
            dx[base + j] += gam * inv_std[ch] * self.grad[base + j];
          }
        }
      }
    }
  });
}

/// Nearest-neighbour resize of the spatial dimensions to (out_h, out_w).
inline Var upsample_nearest(const Var& x, int out_h, int out_w) {
  const Tensor& xv = x->value;
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  std::vector<int> sy(out_h), sx(out_w);
  for (int y = 0; y < out_h; ++y) sy[y] = std::min(h - 1, static_cast<int>(static_cast<long>(y) * h / out_h));
  for (int xx = 0; xx < out_w; ++xx) sx[xx] = std::min(w - 1, static_cast<int>(static_cast<long>(xx) * w / out_w));
  Tensor out({n, c, out_h, out_w});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < out_h; ++y)
        for (int xx = 0; xx < out_w; ++xx) out.at(i, ch, y, xx) = xv.at(i, ch, sy[y], sx[xx]);
  return make_op(std::move(out), {x}, [sy, sx, n, c](Node& self) {
    auto& g = detail::grad_of(self.parents[0]);
    const int oh = static_cast<int>(sy.size()), ow = static_cast<int>(sx.size());
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx) g.at(i, ch, sy[y], sx[xx]) += self.grad.at(i, ch, y, xx);
  });
}

/// Generalized-mean pooling [N,C,H,W] -> [N,C]:
/// (mean over positions of max(x, eps)^p)^(1/p). `p` holds one shared
/// exponent or one per channel.
inline Var gem(const Var& x, const Var& p, double eps) {
  const Tensor& xv = x->value;
  if (xv.rank() != 4) fail(ErrorKind::kShape, "gem expects [N,C,H,W], got ", xv.shape_str());
  const int n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  const bool per_channel = p->value.size() > 1;
  if (per_channel && p->value.size() != static_cast<std::size_t>(c)) {
    fail(ErrorKind::kShape, "gem: exponent count ", p->value.size(), " does not match channels ", c);
  }
  Tensor out({n, c});
  Tensor means({n, c});
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const double pk = p->value[per_channel ? ch : 0];
      const double* src = xv.ptr() + (static_cast<std::size_t>(i) * c + ch) * hw;
      double s = 0;
      for (int j = 0; j < hw; ++j) s += std::pow(std::max(src[j], eps), pk);
      const double mval = s / hw;
      means[static_cast<std::size_t>(i) * c + ch] = mval;
      out[static_cast<std::size_t>(i) * c + ch] = std::pow(mval, 1.0 / pk);
    }
  }
  return make_op(std::move(out), {x, p}, [means = std::move(means), n, c, hw, eps, per_channel](Node& self) {
    const Var& xv = self.parents[0];
    const Var& pv = self.parents[1];
    for (int i = 0; i < n; ++i) {
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t idx = static_cast<std::size_t>(i) * c + ch;
        const double pk = pv->value[per_channel ? ch : 0];
        const double y = self.value[idx];
        const double mval = means[idx];
        const double gy = self.grad[idx];
        const double* src = xv->value.ptr() + idx * hw;
        // dy/dx_j = m^(1/p - 1) x_j^(p-1) / hw for x_j > eps.
        if (xv->requires_grad) {
          const double coef = std::pow(mval, 1.0 / pk - 1.0) / hw * gy;
          double* dst = detail::grad_of(xv).ptr() + idx * hw;
          for (int j = 0; j < hw; ++j) {
            if (src[j] > eps) dst[j] += coef * std::pow(src[j], pk - 1.0);
          }
        }
        // dy/dp = y * (-ln m / p^2 + mean(x^p ln x) / (p m)).
        if (pv->requires_grad) {
          double s = 0;
          for (int j = 0; j < hw; ++j) {
            const double v = std::max(src[j], eps);
            s += std::pow(v, pk) * std::log(v);
          }
          s /= hw;
          const double dp = y * (-std::log(mval) / (pk * pk) + s / (pk * mval));
          detail::grad_of(pv)[per_channel ? ch : 0] += dp * gy;
        }
      }
    }
  });
}

}  // namespace agm::ad

#endif  // AGM_AUTOGRAD_HPP_
