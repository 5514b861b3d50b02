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

// Supervised objective for the two-branch model: batch-hard triplet loss,
// identity cross-entropy, label-smoothing regularization and the
// joint-to-specific KL feedback.
//
// Each loss exists twice: a plain function over matrices (used for
// reporting and as the reference in tests) and a tape op over ad::Var that
// reuses the same forward code and adds the analytic gradient.

#ifndef AGM_LOSSES_HPP_
#define AGM_LOSSES_HPP_

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "agm/autograd.hpp"
#include "agm/backbone.hpp"
#include "agm/common.hpp"
#include "agm/tensor.hpp"
#include "json.hpp"

namespace agm {

inline constexpr double kLogFloor = 1e-12;

struct LossConfig {
  double xi = 0.3;        // triplet margin
  double epsilon = 0.1;   // label smoothing
  double omega = 1.0;     // joint LSR weight (0.7 for the RegDB profile)
  double lambda3 = 1.0;   // global KL feedback weight
  double lambda4 = 1.5;   // head-shoulder KL feedback weight

  void validate() const {
    if (!(xi > 0)) fail(ErrorKind::kConfig, "triplet margin xi must be > 0");
    if (!(epsilon >= 0 && epsilon < 1)) fail(ErrorKind::kConfig, "LSR epsilon must lie in [0,1)");
    if (!(omega >= 0)) fail(ErrorKind::kConfig, "omega must be >= 0");
    if (!(lambda3 >= 0) || !(lambda4 >= 0)) fail(ErrorKind::kConfig, "lambda3/lambda4 must be >= 0");
  }
};

/// N x C posterior probabilities, one row-stochastic row per sample.
struct ProbBatch {
  Matrix probs;

  Eigen::Index size() const { return probs.rows(); }
  Eigen::Index classes() const { return probs.cols(); }

  void validate(double tol = 1e-6) const {
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      const double s = probs.row(r).sum();
      if (!(std::abs(s - 1.0) <= tol) || probs.row(r).minCoeff() < 0.0) {
        fail(ErrorKind::kNumeric, "probability row ", r, " is not stochastic (sum ", s, ")");
      }
    }
  }
};

/// Ordered named scalar losses. `terms` add up to `total`; `extras` are
/// reported alongside but not summed.
struct LossBundle {
  std::vector<std::pair<std::string, double>> terms;
  std::vector<std::pair<std::string, double>> extras;
  double total = 0;

  double get(const std::string& name) const {
    for (const auto& [k, v] : terms) if (k == name) return v;
    for (const auto& [k, v] : extras) if (k == name) return v;
    fail(ErrorKind::kData, "loss bundle has no term '", name, "'");
  }
  double sum_of_terms() const {
    double s = 0;
    for (const auto& kv : terms) s += kv.second;
    return s;
  }
  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    for (const auto& [k, v] : terms) j[k] = v;
    for (const auto& [k, v] : extras) j[k] = v;
    j["total"] = total;
    return j;
  }
};

// ---------------------------------------------------------------------------
// Batch-hard triplet loss.

/// Per-anchor hardest positive / negative indices and hinge arguments.
struct TripletMining {
  std::vector<int> hardest_pos;
  std::vector<int> hardest_neg;
  std::vector<double> d_pos;
  std::vector<double> d_neg;
  std::vector<double> hinge_arg;  // d_pos - d_neg + xi
  double loss = 0;
};

inline void check_triplet_batch(const std::vector<int>& labels) {
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) fail(ErrorKind::kData, "batch-hard triplet loss needs at least two identities");
  bool has_pair = false;
  for (const auto& kv : counts) has_pair = has_pair || kv.second >= 2;
  if (!has_pair) fail(ErrorKind::kData, "batch-hard triplet loss needs two samples of some identity");
}

/// Euclidean distances on raw embeddings; ties go to the lowest index.
inline TripletMining mine_hard_triplets(const Matrix& emb, const std::vector<int>& labels, double xi) {
  const auto n = static_cast<int>(emb.rows());
  if (static_cast<std::size_t>(n) != labels.size()) fail(ErrorKind::kShape, "triplet: label count mismatch");
  check_triplet_batch(labels);
  Matrix dist(n, n);
  for (int i = 0; i < n; ++i) {
    dist(i, i) = 0;
    for (int j = i + 1; j < n; ++j) {
      const double d = std::sqrt(std::max(0.0, (emb.row(i) - emb.row(j)).squaredNorm()));
      dist(i, j) = dist(j, i) = d;
    }
  }
  TripletMining m;
  m.hardest_pos.resize(n);
  m.hardest_neg.resize(n);
  m.d_pos.resize(n);
  m.d_neg.resize(n);
  m.hinge_arg.resize(n);
  double total = 0;
  for (int a = 0; a < n; ++a) {
    int p = -1, q = -1;
    double dp = -1, dn = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (labels[j] == labels[a]) {
        if (dist(a, j) > dp) { dp = dist(a, j); p = j; }
      } else if (dist(a, j) < dn) {
        dn = dist(a, j);
        q = j;
      }
    }
    m.hardest_pos[a] = p;
    m.hardest_neg[a] = q;
    m.d_pos[a] = dp;
    m.d_neg[a] = dn;
    m.hinge_arg[a] = dp - dn + xi;
    total += std::max(m.hinge_arg[a], 0.0);
  }
  m.loss = total / n;
  return m;
}

inline double hard_triplet(const EmbeddingBatch& emb, double xi) {
  emb.validate();
  return mine_hard_triplets(emb.vectors, emb.labels, xi).loss;
}

// ---------------------------------------------------------------------------
// Classification losses.

struct ClassifierHead {
  ad::Var weight;  // C_cls x D

  ClassifierHead() = default;
  ClassifierHead(int classes, int dim, Rng& rng, double stddev = 1e-3)
      : weight(ad::parameter(nn::normal_tensor({classes, dim}, stddev, rng))) {}

  int classes() const { return weight->value.dim(0); }
  int dim() const { return weight->value.dim(1); }
};

inline ProbBatch posterior(const ClassifierHead& head, const EmbeddingBatch& emb) {
  if (emb.dim() != head.dim()) {
    fail(ErrorKind::kShape, "posterior: embedding dim ", emb.dim(), " does not match head dim ", head.dim());
  }
  return {ad::softmax_rows(emb.vectors * head.weight->value.as_matrix().transpose())};
}

inline void check_labels(const std::vector<int>& labels, Eigen::Index rows, Eigen::Index classes) {
  if (static_cast<Eigen::Index>(labels.size()) != rows) {
    fail(ErrorKind::kShape, "label count ", labels.size(), " does not match batch size ", rows);
  }
  for (int y : labels) {
    if (y < 0 || y >= classes) fail(ErrorKind::kData, "label ", y, " outside [0, ", classes, ")");
  }
}

/// -mean ln p(y_i), with p floored at 1e-12.
inline double identity_ce(const ProbBatch& p, const std::vector<int>& labels) {
  check_labels(labels, p.size(), p.classes());
  double s = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) s -= std::log(std::max(p.probs(i, labels[i]), kLogFloor));
  return s / static_cast<double>(p.size());
}

/// Smoothed targets: 1 - eps + eps/C on the true class, eps/C elsewhere.
inline ProbBatch lsr_targets(const std::vector<int>& labels, int classes, double eps) {
  if (!(eps >= 0 && eps < 1)) fail(ErrorKind::kConfig, "LSR epsilon must lie in [0,1)");
  if (classes < 1) fail(ErrorKind::kConfig, "class count must be positive");
  check_labels(labels, static_cast<Eigen::Index>(labels.size()), classes);
  const double off = eps / classes;
  ProbBatch q{Matrix::Constant(static_cast<Eigen::Index>(labels.size()), classes, off)};
  for (std::size_t i = 0; i < labels.size(); ++i) q.probs(static_cast<Eigen::Index>(i), labels[i]) = 1.0 - eps + off;
  return q;
}

/// -mean over rows of sum_k q_k ln p_k.
inline double lsr_loss(const ProbBatch& p, const ProbBatch& q) {
  if (p.probs.rows() != q.probs.rows() || p.probs.cols() != q.probs.cols()) {
    fail(ErrorKind::kShape, "lsr_loss: probs ", p.size(), "x", p.classes(), " vs targets ", q.size(), "x", q.classes());
  }
  double s = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    for (Eigen::Index k = 0; k < p.classes(); ++k) s -= q.probs(i, k) * std::log(std::max(p.probs(i, k), kLogFloor));
  return s / static_cast<double>(p.size());
}

inline double joint_hybrid_loss(const ProbBatch& joint, const std::vector<int>& labels, const LossConfig& cfg) {
  const double ce = identity_ce(joint, labels);
  if (cfg.omega == 0) return ce;
  return ce + cfg.omega * lsr_loss(joint, lsr_targets(labels, static_cast<int>(joint.classes()), cfg.epsilon));
}

/// mean over rows of KL(teacher || student); both floored at 1e-12.
inline double kl_feedback(const ProbBatch& teacher, const ProbBatch& student) {
  if (teacher.probs.rows() != student.probs.rows() || teacher.probs.cols() != student.probs.cols()) {
    fail(ErrorKind::kShape, "kl_feedback: teacher and student shapes differ");
  }
  teacher.validate();
  student.validate();
  double s = 0;
  for (Eigen::Index i = 0; i < teacher.size(); ++i) {
    for (Eigen::Index k = 0; k < teacher.classes(); ++k) {
      const double t = teacher.probs(i, k);
      if (t == 0) continue;
      s += t * (std::log(std::max(t, kLogFloor)) - std::log(std::max(student.probs(i, k), kLogFloor)));
    }
  }
  return s / static_cast<double>(teacher.size());
}

/// (identity_ce(p_g) + lambda3 KL(p_joint||p_g), identity_ce(p_h) + lambda4 KL(p_joint||p_h)).
inline std::pair<double, double> regularized_branch_losses(const ProbBatch& pg, const ProbBatch& ph,
                                                           const ProbBatch& pj, const std::vector<int>& labels,
                                                           const LossConfig& cfg) {
  const double lg = identity_ce(pg, labels) + (cfg.lambda3 != 0 ? cfg.lambda3 * kl_feedback(pj, pg) : 0.0);
  const double lh = identity_ce(ph, labels) + (cfg.lambda4 != 0 ? cfg.lambda4 * kl_feedback(pj, ph) : 0.0);
  return {lg, lh};
}

/// The six summed terms of the two-branch objective.
struct ObjectiveTerms {
  double l_id_g = 0, l_id_h = 0, l_id_joint = 0;
  double l_t_g = 0, l_t_h = 0, l_t_joint = 0;
  double kl_g = 0, kl_h = 0;  // reported only
};

/// Unweighted sum of the six terms; rejects non-finite terms by name.
inline LossBundle total_loss(const ObjectiveTerms& t) {
  LossBundle b;
  b.terms = {{"l_id_g", t.l_id_g}, {"l_id_h", t.l_id_h}, {"l_id_joint", t.l_id_joint},
             {"l_t_g", t.l_t_g},   {"l_t_h", t.l_t_h},   {"l_t_joint", t.l_t_joint}};
  b.extras = {{"kl_g", t.kl_g}, {"kl_h", t.kl_h}};
  for (const auto& [name, v] : b.terms) {
    if (!std::isfinite(v)) fail(ErrorKind::kNumeric, "loss term ", name, " is not finite (", v, ")");
  }
  b.total = b.sum_of_terms();
  return b;
}

// ---------------------------------------------------------------------------
// Tape ops.

namespace lossop {

using ad::Node;
using ad::Var;

inline Var hard_triplet(const Var& emb, const std::vector<int>& labels, double xi, TripletMining* mining = nullptr) {
  TripletMining m = mine_hard_triplets(emb->value.as_matrix(), labels, xi);
  const double value = m.loss;
  if (mining) *mining = m;
  return ad::make_op(Tensor({1}, value), {emb}, [m = std::move(m)](Node& self) {
    const Var& ev = self.parents[0];
    const auto e = ev->value.as_matrix();
    auto g = ad::detail::grad_of(ev).as_matrix();
    const auto n = static_cast<double>(e.rows());
    const double g0 = self.grad[0] / n;
    for (Eigen::Index a = 0; a < e.rows(); ++a) {
      if (!(m.hinge_arg[a] > 0)) continue;
      const int p = m.hardest_pos[a], q = m.hardest_neg[a];
      if (m.d_pos[a] > 0) {
        const auto u = ((e.row(a) - e.row(p)) / m.d_pos[a]).eval();
        g.row(a) += g0 * u;
        g.row(p) -= g0 * u;
      }
      if (m.d_neg[a] > 0) {
        const auto u = ((e.row(a) - e.row(q)) / m.d_neg[a]).eval();
        g.row(a) -= g0 * u;
        g.row(q) += g0 * u;
      }
    }
  });
}

/// -mean ln p(y_i) on a probability node.
inline Var identity_ce(const Var& probs, const std::vector<int>& labels) {
  const ProbBatch p{probs->value.as_matrix()};
  const double value = agm::identity_ce(p, labels);
  return ad::make_op(Tensor({1}, value), {probs}, [labels](Node& self) {
    const Var& pv = self.parents[0];
    const auto p = pv->value.as_matrix();
    auto g = ad::detail::grad_of(pv).as_matrix();
    const double g0 = self.grad[0] / static_cast<double>(p.rows());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const double py = p(i, labels[i]);
      if (py > kLogFloor) g(i, labels[i]) -= g0 / py;
    }
  });
}

/// Soft-target cross-entropy against constant targets.
inline Var soft_ce(const Var& probs, const Matrix& targets) {
  const ProbBatch p{probs->value.as_matrix()};
  const double value = agm::lsr_loss(p, ProbBatch{targets});
  return ad::make_op(Tensor({1}, value), {probs}, [targets](Node& self) {
    const Var& pv = self.parents[0];
    const auto p = pv->value.as_matrix();
    auto g = ad::detail::grad_of(pv).as_matrix();
    const double g0 = self.grad[0] / static_cast<double>(p.rows());
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      for (Eigen::Index k = 0; k < p.cols(); ++k)
        if (p(i, k) > kLogFloor) g(i, k) -= g0 * targets(i, k) / p(i, k);
  });
}

/// KL(teacher || student). Only the teacher's value is read: no gradient
/// ever reaches the teacher's graph.
inline Var kl_feedback(const Var& teacher, const Var& student) {
  const Matrix t = teacher->value.as_matrix();
  const double value = agm::kl_feedback(ProbBatch{t}, ProbBatch{student->value.as_matrix()});
  return ad::make_op(Tensor({1}, value), {student}, [t](Node& self) {
    const Var& sv = self.parents[0];
    const auto s = sv->value.as_matrix();
    auto g = ad::detail::grad_of(sv).as_matrix();
    const double g0 = self.grad[0] / static_cast<double>(s.rows());
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      for (Eigen::Index k = 0; k < s.cols(); ++k)
        if (s(i, k) > kLogFloor) g(i, k) -= g0 * t(i, k) / s(i, k);
  });
}

}  // namespace lossop

}  // namespace agm

#endif  // AGM_LOSSES_HPP_
