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

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "agm/autograd.hpp"
#include "agm/nn.hpp"
#include "oracles/finite_difference.hpp"

namespace {

using agm::Tensor;
using agm::ad::Var;
namespace ad = agm::ad;
namespace nn = agm::nn;

Tensor randn(std::vector<int> shape, std::uint64_t seed, double stddev = 1.0) {
  agm::Rng rng(seed);
  return nn::normal_tensor(std::move(shape), stddev, rng);
}

// Smooth scalar probe of an arbitrary node.
Var probe(const Var& v) { return ad::mean_sq_to(v, 0.37); }

// Runs forward+backward once, then finite-differences every parameter.
oracle::GradCheckReport check(const std::vector<nn::NamedParam>& params, const std::function<Var()>& build,
                              const std::function<std::vector<long>()>& signature = {}) {
  nn::zero_grads(params);
  ad::backward(build());
  return oracle::check_gradients(params, [&] { return build()->scalar(); }, signature);
}

std::vector<long> sign_pattern(const Tensor& t, double at = 0.0) {
  std::vector<long> s;
  for (double v : t.data) s.push_back(v > at);
  return s;
}

TEST(Autograd, AddAndScale) {
  Var a = ad::parameter(randn({2, 3}, 1));
  Var b = ad::parameter(randn({2, 3}, 2));
  auto rep = check({{"a", a}, {"b", b}}, [&] { return probe(ad::add(ad::scale(a, -1.5), b)); });
  EXPECT_LT(rep.max_rel_error, 1e-6) << rep.worst;
  EXPECT_EQ(rep.checked, 12);
}

TEST(Autograd, WeightedSumOfScalars) {
  Var a = ad::parameter(randn({4}, 3));
  Var b = ad::parameter(randn({5}, 4));
  auto build = [&] { return ad::weighted_sum({probe(a), probe(b)}, {2.0, 0.25}); };
  Var out = build();
  EXPECT_NEAR(out->scalar(), 2.0 * probe(a)->scalar() + 0.25 * probe(b)->scalar(), 1e-12);
  auto rep = check({{"a", a}, {"b", b}}, build);
  EXPECT_LT(rep.max_rel_error, 1e-6) << rep.worst;
}

TEST(Autograd, ReluAwayFromKinks) {
  Var a = ad::parameter(randn({30}, 5));
  auto rep = check({{"a", a}}, [&] { return probe(ad::relu(a)); }, [&] { return sign_pattern(a->value); });
  EXPECT_LT(rep.max_rel_error, 1e-6) << rep.worst;
}

TEST(Autograd, LeakyReluAndSigmoid) {
  Var a = ad::parameter(randn({30}, 6));
  auto rep = check({{"a", a}}, [&] { return probe(ad::sigmoid(ad::leaky_relu(a, 0.2))); },
                   [&] { return sign_pattern(a->value); });
  EXPECT_LT(rep.max_rel_error, 1e-6) << rep.worst;
}

TEST(Autograd, ClampPassesGradientInsideOnly) {
  Var a = ad::parameter(Tensor({3}));
  a->value.data = {-2.0, 0.3, 2.0};
  ad::backward(ad::mean_sq_to(ad::clamp(a, -1.0, 1.0), 0.0));
  EXPECT_EQ(a->grad[0], 0.0);
  EXPECT_NEAR(a->grad[1], 2 * 0.3 / 3, 1e-12);
  EXPECT_EQ(a->grad[2], 0.0);
}

TEST(Autograd, MeanAbsDiff) {
  Var a = ad::parameter(randn({3, 4}, 7));
  Var b = ad::parameter(randn({3, 4}, 8));
  double expect = 0;
  for (std::size_t i = 0; i < 12; ++i) expect += std::abs(a->value[i] - b->value[i]) / 12;
  EXPECT_NEAR(ad::mean_abs_diff(a, b)->scalar(), expect, 1e-12);
  auto rep = check({{"a", a}, {"b", b}}, [&] { return ad::mean_abs_diff(a, b); });
  EXPECT_LT(rep.max_rel_error, 1e-6) << rep.worst;
}

TEST(Autograd, MeanNegLogBothForms) {
  Var a = ad::parameter(Tensor({4}));
  a->value.data = {0.1, 0.4, 0.6, 0.95};
  double pos = 0, neg = 0;
  for (double v : a->value.data) {
    pos -= std::log(v) / 4;
    neg -= std::log(1 - v) / 4;
  }
  EXPECT_NEAR(ad::mean_neg_log(a, false)->scalar(), pos, 1e-12);
  EXPECT_NEAR(ad::mean_neg_log(a, true)->scalar(), neg, 1e-12);
  auto rep = check({{"a", a}}, [&] { return ad::add(ad::mean_neg_log(a, false), ad::mean_neg_log(a, true)); });
  EXPECT_LT(rep.max_rel_error, 1e-6) << rep.worst;
}

TEST(Autograd, MeanNegLogFloorsSaturatedScores) {
  Var a = ad::constant(Tensor({1}, 0.0));
  EXPECT_NEAR(ad::mean_neg_log(a, false)->scalar(), -std::log(1e-7), 1e-9);
  EXPECT_TRUE(std::isfinite(ad::mean_neg_log(ad::constant(Tensor({1}, 1.0)), true)->scalar()));
}

TEST(Autograd, LinearSoftmaxConcat) {
  Var x = ad::parameter(randn({3, 4}, 9));
  Var y = ad::parameter(randn({3, 2}, 10));
  Var w = ad::parameter(randn({5, 6}, 11));
  auto rep = check({{"x", x}, {"y", y}, {"w", w}},
                   [&] { return probe(ad::softmax(ad::linear(ad::concat_cols(x, y), w))); });
  EXPECT_LT(rep.max_rel_error, 1e-6) << rep.worst;
}

TEST(Autograd, SoftmaxRowsSumToOne) {
  Var logits = ad::constant(randn({4, 7}, 12, 30.0));
  const Tensor p = ad::softmax(logits)->value;
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int c = 0; c < 7; ++c) s += p[static_cast<std::size_t>(r * 7 + c)];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Autograd, Conv2dStridedPadded) {
  Var x = ad::parameter(randn({2, 3, 7, 6}, 13));
  Var w = ad::parameter(randn({4, 3, 3, 3}, 14, 0.3));
  Var b = ad::parameter(randn({4}, 15));
  Var out = ad::conv2d(x, w, b, 2, 1);
  EXPECT_EQ(out->value.shape, (std::vector<int>{2, 4, 4, 3}));
  auto rep = check({{"x", x}, {"w", w}, {"b", b}}, [&] { return probe(ad::conv2d(x, w, b, 2, 1)); });
  EXPECT_LT(rep.max_rel_error, 1e-6) << rep.worst;
}

TEST(Autograd, Conv2dMatchesDirectSum) {
  const Tensor x = randn({1, 2, 5, 5}, 16);
  const Tensor w = randn({3, 2, 3, 3}, 17);
  const Tensor y = ad::conv2d(ad::constant(x), ad::constant(w), nullptr, 1, 1)->value;
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        double s = 0;
        for (int c = 0; c < 2; ++c)
          for (int ki = 0; ki < 3; ++ki)
            for (int kj = 0; kj < 3; ++kj) {
              const int yi = i + ki - 1, xj = j + kj - 1;
              if (yi < 0 || yi >= 5 || xj < 0 || xj >= 5) continue;
              s += x.at(0, c, yi, xj) * w.at(o, c, ki, kj);
            }
        ASSERT_NEAR(y.at(0, o, i, j), s, 1e-12);
      }
}

TEST(Autograd, BatchNormTraining) {
  Var x = ad::parameter(randn({3, 2, 3, 3}, 18));
  nn::BatchNorm2d bn(2);
  bn.gamma->value.data = {1.3, 0.7};
  bn.beta->value.data = {0.1, -0.2};
  auto rep = check({{"x", x}, {"g", bn.gamma}, {"b", bn.beta}}, [&] { return probe(bn(x, true)); });
  EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst << " " << rep.worst_analytic << " " << rep.worst_numeric;
}

TEST(Autograd, BatchNormNormalizesPerChannel) {
  nn::BatchNorm2d bn(2);
  const Tensor y = bn(ad::constant(randn({4, 2, 3, 3}, 19, 5.0)), true)->value;
  for (int c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) m += y.at(n, c, i / 3, i % 3) / 36;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) v += std::pow(y.at(n, c, i / 3, i % 3) - m, 2) / 36;
    EXPECT_NEAR(m, 0.0, 1e-10);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
}

TEST(Autograd, UpsampleNearest) {
  Var x = ad::parameter(randn({1, 2, 2, 3}, 20));
  const Tensor y = ad::upsample_nearest(x, 4, 6)->value;
  EXPECT_EQ(y.at(0, 1, 3, 5), x->value.at(0, 1, 1, 2));
  EXPECT_EQ(y.at(0, 0, 2, 1), x->value.at(0, 0, 1, 0));
  auto rep = check({{"x", x}}, [&] { return probe(ad::upsample_nearest(x, 5, 7)); });
  EXPECT_LT(rep.max_rel_error, 1e-6) << rep.worst;
}

TEST(Autograd, GemInputAndExponent) {
  Var x = ad::parameter(randn({2, 3, 3, 2}, 21));
  for (auto& v : x->value.data) v = std::abs(v) + 0.05;
  Var p = ad::parameter(Tensor({3}));
  p->value.data = {1.5, 3.0, 4.2};
  auto rep = check({{"x", x}, {"p", p}}, [&] { return probe(ad::gem(x, p, 1e-6)); });
  EXPECT_LT(rep.max_rel_error, 1e-5) << rep.worst;
}

TEST(Autograd, GradientsAccumulateAcrossBackwardCalls) {
  Var a = ad::parameter(Tensor({1}, 2.0));
  ad::backward(ad::mean_sq_to(a, 0.0));
  ad::backward(ad::mean_sq_to(a, 0.0));
  EXPECT_DOUBLE_EQ(a->grad[0], 8.0);
  nn::zero_grads({{"a", a}});
  EXPECT_DOUBLE_EQ(a->grad[0], 0.0);
}

TEST(Autograd, DetachBlocksGradient) {
  Var a = ad::parameter(Tensor({1}, 2.0));
  Var loss = ad::add(ad::mean_sq_to(ad::detach(a), 0.0), ad::mean_sq_to(a, 1.0));
  ad::backward(loss);
  EXPECT_DOUBLE_EQ(a->grad[0], 2.0);
}

TEST(Autograd, BackwardRejectsNonScalarRoot) {
  Var a = ad::parameter(Tensor({2}, 1.0));
  EXPECT_THROW(ad::backward(ad::relu(a)), agm::Error);
}

TEST(Optimizers, SgdMomentumAndDecay) {
  Var a = ad::parameter(Tensor({1}, 1.0));
  nn::Sgd opt(0.9, 0.1);
  a->grad = Tensor({1}, 0.5);
  opt.step({{"a", a}}, 0.1);
  // v = 0.5 + 0.1 * 1 = 0.6, theta = 1 - 0.06
  EXPECT_NEAR(a->value[0], 0.94, 1e-12);
  opt.step({{"a", a}}, 0.1);
  // v = 0.9 * 0.6 + 0.5 + 0.094 = 1.134
  EXPECT_NEAR(a->value[0], 0.94 - 0.1134, 1e-12);
  EXPECT_NEAR(opt.state().at("a")[0], 1.134, 1e-12);
}

TEST(Optimizers, SgdSkipsDecayWhenFlagged) {
  Var a = ad::parameter(Tensor({1}, 1.0));
  nn::Sgd opt(0.0, 10.0);
  a->grad = Tensor({1}, 0.0);
  opt.step({{"a", a, false}}, 1.0);
  EXPECT_DOUBLE_EQ(a->value[0], 1.0);
}

TEST(Optimizers, AdamFirstStepMovesByLearningRate) {
  Var a = ad::parameter(Tensor({2}));
  a->value.data = {1.0, -1.0};
  a->grad = Tensor({2});
  a->grad.data = {3.0, -0.01};
  nn::Adam opt(0.01, 0.5, 0.999);
  opt.step({{"a", a}});
  EXPECT_NEAR(a->value[0], 0.99, 1e-6);
  EXPECT_NEAR(a->value[1], -0.99, 1e-5);
}

TEST(TensorImage, RoundTrip) {
  agm::Image img(4, 3, agm::Modality::kInfrared);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 7);
  const Tensor t = nn::images_to_tensor(std::vector<agm::Image>{img});
  for (double v : t.data) {
    ASSERT_GE(v, -1.0);
    ASSERT_LE(v, 1.0);
  }
  EXPECT_EQ(nn::tensor_to_image(t, 0, agm::Modality::kInfrared).pixels, img.pixels);
}

}  // namespace
