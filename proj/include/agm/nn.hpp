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

// Layers, parameter bookkeeping and optimizers built on the autograd tape.

#ifndef AGM_NN_HPP_
#define AGM_NN_HPP_

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "agm/autograd.hpp"
#include "agm/common.hpp"
#include "agm/image.hpp"
#include "agm/tensor.hpp"

namespace agm::nn {

using ad::Var;

struct NamedParam {
  std::string name;
  Var var;
  bool decay = true;  // subject to weight decay
};

/// Non-trainable state that still belongs in a checkpoint.
struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

inline Tensor kaiming_normal(std::vector<int> shape, int fan_in, Rng& rng, double gain = std::sqrt(2.0)) {
  Tensor t(std::move(shape));
  const double stddev = gain / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data) v = normal(rng, 0.0, stddev);
  return t;
}

inline Tensor normal_tensor(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = normal(rng, 0.0, stddev);
  return t;
}

struct Conv2d {
  Var weight;
  Var bias;  // null when bias-free
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int stride_, int pad_, bool with_bias, Rng& rng, double gain = std::sqrt(2.0))
      : stride(stride_), pad(pad_) {
    weight = ad::parameter(kaiming_normal({out, in, kernel, kernel}, in * kernel * kernel, rng, gain));
    if (with_bias) bias = ad::parameter(Tensor({out}, 0.0));
  }

  Var operator()(const Var& x) const { return ad::conv2d(x, weight, bias, stride, pad); }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".weight", weight, true});
    if (bias) out.push_back({prefix + ".bias", bias, false});
  }
};

struct BatchNorm2d {
  Var gamma;
  Var beta;
  ad::BatchNormStats stats;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels)
      : gamma(ad::parameter(Tensor({channels}, 1.0))), beta(ad::parameter(Tensor({channels}, 0.0))),
        stats(channels) {}

  Var operator()(const Var& x, bool training) { return ad::batch_norm(x, gamma, beta, stats, training); }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".gamma", gamma, false});
    out.push_back({prefix + ".beta", beta, false});
  }
  void buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
    out.push_back({prefix + ".running_mean", &stats.running_mean});
    out.push_back({prefix + ".running_var", &stats.running_var});
  }
};

inline void zero_grads(const std::vector<NamedParam>& params) {
  for (const auto& p : params) p.var->zero_grad();
}

/// SGD with momentum and L2 weight decay (PyTorch convention:
/// v <- mu*v + g + wd*theta; theta <- theta - lr*v).
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<NamedParam>& params, double lr) {
    for (const auto& p : params) {
      if (p.var->grad.size() != p.var->value.size()) continue;
      auto& vel = velocity_[p.name];
      if (vel.size() != p.var->value.size()) vel = Tensor(p.var->value.shape, 0.0);
      auto& theta = p.var->value;
      const double wd = p.decay ? weight_decay_ : 0.0;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = p.var->grad[i] + wd * theta[i];
        vel[i] = momentum_ * vel[i] + g;
        theta[i] -= lr * vel[i];
      }
    }
  }

  std::map<std::string, Tensor>& state() { return velocity_; }
  const std::map<std::string, Tensor>& state() const { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, Tensor> velocity_;
};

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<NamedParam>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& p : params) {
      if (p.var->grad.size() != p.var->value.size()) continue;
      auto& m = m_[p.name];
      auto& v = v_[p.name];
      if (m.size() != p.var->value.size()) {
        m = Tensor(p.var->value.shape, 0.0);
        v = Tensor(p.var->value.shape, 0.0);
      }
      auto& theta = p.var->value;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = p.var->grad[i];
        m[i] = beta1_ * m[i] + (1 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1 - beta2_) * g * g;
        theta[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

/// Images to an NCHW tensor scaled to [-1, 1].
inline Tensor images_to_tensor(const std::vector<const Image*>& batch) {
  if (batch.empty()) fail(ErrorKind::kShape, "empty image batch");
  const int h = batch[0]->height, w = batch[0]->width;
  Tensor t({static_cast<int>(batch.size()), 3, h, w});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const Image& img = *batch[n];
    if (img.height != h || img.width != w) {
      fail(ErrorKind::kShape, "image batch mixes sizes ", h, "x", w, " and ", img.height, "x", img.width);
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) t.at(static_cast<int>(n), c, y, x) = img.at(y, x, c) / 127.5 - 1.0;
  }
  return t;
}

inline Tensor images_to_tensor(const std::vector<Image>& batch) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& img : batch) ptrs.push_back(&img);
  return images_to_tensor(ptrs);
}

/// Inverse of images_to_tensor for sample n; tags are left at defaults.
inline Image tensor_to_image(const Tensor& t, int n, Modality modality) {
  const int h = t.dim(2), w = t.dim(3);
  Image img(h, w, modality);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = round_to_byte((t.at(n, c, y, x) + 1.0) * 127.5);
  return img;
}

}  // namespace agm::nn

#endif  // AGM_NN_HPP_
