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

// Two-stream feature extraction: a convolutional encoder per granularity
// (global body, head-shoulder), GeM pooling, and concatenation fusion.

#ifndef AGM_BACKBONE_HPP_
#define AGM_BACKBONE_HPP_

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "agm/autograd.hpp"
#include "agm/common.hpp"
#include "agm/image.hpp"
#include "agm/nn.hpp"
#include "agm/tensor.hpp"

namespace agm {

enum class BranchTag { kGlobal, kHeadShoulder, kJoint };

inline const char* to_string(BranchTag t) {
  switch (t) {
    case BranchTag::kGlobal: return "global";
    case BranchTag::kHeadShoulder: return "head_shoulder";
    case BranchTag::kJoint: return "joint";
  }
  return "?";
}

/// N x D embeddings with one identity label per row.
struct EmbeddingBatch {
  Matrix vectors;
  std::vector<int> labels;
  BranchTag tag = BranchTag::kGlobal;

  Eigen::Index size() const { return vectors.rows(); }
  Eigen::Index dim() const { return vectors.cols(); }

  void validate() const {
    if (vectors.rows() < 1) fail(ErrorKind::kShape, "embedding batch is empty");
    if (static_cast<std::size_t>(vectors.rows()) != labels.size()) {
      fail(ErrorKind::kShape, "embedding batch has ", vectors.rows(), " rows but ", labels.size(), " labels");
    }
    if (!vectors.allFinite()) fail(ErrorKind::kNumeric, "embedding batch contains non-finite entries");
  }
};

struct BranchConfig {
  BranchTag tag = BranchTag::kGlobal;
  int in_h = 288;
  int in_w = 144;
  std::vector<int> stage_channels{16, 32, 64, 128};
  int convs_per_stage = 1;
  bool batch_norm = true;
  bool bias = false;

  static BranchConfig global(int channels = 128) {
    BranchConfig c;
    c.tag = BranchTag::kGlobal;
    c.stage_channels = {std::max(1, channels / 8), std::max(1, channels / 4), std::max(1, channels / 2), channels};
    return c;
  }
  static BranchConfig head_shoulder(int channels = 128) {
    BranchConfig c = global(channels);
    c.tag = BranchTag::kHeadShoulder;
    c.in_h = 128;
    c.in_w = 144;
    return c;
  }
  int out_channels() const { return stage_channels.back(); }
};

/// Convolutional encoder: stages of [conv3x3 (first one stride 2) -> BN ->
/// ReLU]. Output is C x H' x W' per image.
class BranchNet {
 public:
  BranchNet() = default;
  BranchNet(BranchConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    if (cfg_.stage_channels.empty()) fail(ErrorKind::kConfig, "branch needs at least one stage");
    if (cfg_.convs_per_stage < 1) fail(ErrorKind::kConfig, "convs_per_stage must be >= 1");
    int in = 3;
    for (int out : cfg_.stage_channels) {
      for (int k = 0; k < cfg_.convs_per_stage; ++k) {
        convs_.emplace_back(in, out, 3, k == 0 ? 2 : 1, 1, cfg_.bias, rng);
        if (cfg_.batch_norm) norms_.emplace_back(out);
        in = out;
      }
    }
  }

  const BranchConfig& config() const { return cfg_; }
  int out_channels() const { return cfg_.out_channels(); }

  void check_input(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != cfg_.in_h || x.dim(3) != cfg_.in_w) {
      fail(ErrorKind::kShape, to_string(cfg_.tag), " branch expects 3x", cfg_.in_h, "x", cfg_.in_w,
           " inputs, got ", x.shape_str());
    }
  }

  ad::Var forward(const ad::Var& x, bool training) {
    check_input(x->value);
    ad::Var h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = convs_[i](h);
      if (cfg_.batch_norm) h = norms_[i](h, training);
      h = ad::relu(h);
    }
    return h;
  }

  /// Feature maps [N, C, H', W'] for a batch of images (no gradient).
  Tensor extract(const std::vector<Image>& batch, bool training = false) {
    if (batch.empty()) fail(ErrorKind::kShape, "extract: empty batch");
    for (const auto& img : batch) {
      if (img.height != cfg_.in_h || img.width != cfg_.in_w) {
        fail(ErrorKind::kShape, to_string(cfg_.tag), " branch expects ", cfg_.in_h, "x", cfg_.in_w,
             " images, got ", img.height, "x", img.width);
      }
    }
    auto out = forward(ad::constant(nn::images_to_tensor(batch)), training);
    return out->value;
  }

  void collect(const std::string& prefix, std::vector<nn::NamedParam>& out) const {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].collect(prefix + ".conv" + std::to_string(i), out);
      if (cfg_.batch_norm) norms_[i].collect(prefix + ".bn" + std::to_string(i), out);
    }
  }
  void buffers(const std::string& prefix, std::vector<nn::NamedBuffer>& out) {
    if (!cfg_.batch_norm) return;
    for (std::size_t i = 0; i < norms_.size(); ++i) norms_[i].buffers(prefix + ".bn" + std::to_string(i), out);
  }

 private:
  BranchConfig cfg_;
  std::vector<nn::Conv2d> convs_;
  std::vector<nn::BatchNorm2d> norms_;
};

/// Learnable GeM exponent (shared, or one per channel) with a positive
/// clamp epsilon.
struct GemPooler {
  ad::Var p;
  double eps = 1e-6;

  explicit GemPooler(double p0 = 3.0, int channels = 1, double eps_ = 1e-6)
      : p(ad::parameter(Tensor({std::max(1, channels)}, p0))), eps(eps_) {
    if (p0 < 1.0) fail(ErrorKind::kConfig, "GeM exponent must be >= 1");
    if (eps <= 0) fail(ErrorKind::kConfig, "GeM epsilon must be positive");
  }

  ad::Var operator()(const ad::Var& fmap) const { return ad::gem(fmap, p, eps); }

  /// Keeps p >= 1 after an optimizer step.
  void project() {
    for (auto& v : p->value.data) v = std::max(v, 1.0);
  }
  double exponent(int channel = 0) const { return p->value[p->value.size() > 1 ? channel : 0]; }
};

/// GeM over one feature map [C, H, W]: per channel
/// (mean_j max(x_j, eps)^p)^(1/p).
inline Vector gem_pool(const Tensor& fmap, const GemPooler& pooler) {
  if (fmap.rank() != 3 || fmap.dim(1) * fmap.dim(2) < 1) {
    fail(ErrorKind::kShape, "gem_pool expects a [C,H,W] map, got ", fmap.shape_str());
  }
  const int c = fmap.dim(0), hw = fmap.dim(1) * fmap.dim(2);
  Vector out(c);
  for (int ch = 0; ch < c; ++ch) {
    const double p = pooler.exponent(ch);
    double s = 0;
    for (int j = 0; j < hw; ++j) s += std::pow(std::max(fmap[static_cast<std::size_t>(ch) * hw + j], pooler.eps), p);
    out[ch] = std::pow(s / hw, 1.0 / p);
  }
  return out;
}

/// Row-wise concatenation of global and head-shoulder embeddings.
inline EmbeddingBatch fuse_concat(const EmbeddingBatch& vg, const EmbeddingBatch& vh) {
  if (vg.size() != vh.size()) {
    fail(ErrorKind::kShape, "fuse_concat: ", vg.size(), " global rows vs ", vh.size(), " head-shoulder rows");
  }
  if (vg.labels != vh.labels) {
    fail(ErrorKind::kData, "fuse_concat: labels are not row-aligned between global and head-shoulder batches");
  }
  EmbeddingBatch out;
  out.vectors.resize(vg.size(), vg.dim() + vh.dim());
  out.vectors << vg.vectors, vh.vectors;
  out.labels = vg.labels;
  out.tag = BranchTag::kJoint;
  return out;
}

}  // namespace agm

#endif  // AGM_BACKBONE_HPP_
