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
#include <random>

#include "agm/backbone.hpp"
#include "test_util.hpp"

namespace {

using agm::BranchConfig;
using agm::BranchNet;
using agm::GemPooler;
using agm::Tensor;

BranchConfig small(agm::BranchTag tag = agm::BranchTag::kGlobal) {
  BranchConfig c = tag == agm::BranchTag::kGlobal ? BranchConfig::global(16) : BranchConfig::head_shoulder(16);
  c.in_h = 32;
  c.in_w = 16;
  return c;
}

Tensor map_of(std::vector<double> values, int c = 1) {
  Tensor t({c, 1, static_cast<int>(values.size()) / c});
  t.data.assign(values.begin(), values.end());
  return t;
}

TEST(Extract, BatchShape) {
  agm::Rng rng(1);
  BranchNet net(small(), rng);
  std::mt19937_64 g(2);
  std::vector<agm::Image> batch{testutil::random_image(32, 16, agm::Modality::kGrayscale, g),
                                testutil::random_image(32, 16, agm::Modality::kGrayscale, g)};
  const Tensor f = net.extract(batch);
  ASSERT_EQ(f.rank(), 4);
  EXPECT_EQ(f.dim(0), 2);
  EXPECT_EQ(f.dim(1), 16);
  EXPECT_GE(f.dim(2), 1);
  EXPECT_GE(f.dim(3), 1);
}

TEST(Extract, DuplicatedImagesGiveIdenticalMaps) {
  agm::Rng rng(3);
  BranchNet net(small(), rng);
  std::mt19937_64 g(4);
  const agm::Image img = testutil::random_image(32, 16, agm::Modality::kVisible, g);
  const Tensor f = net.extract({img, img});
  const std::size_t half = f.size() / 2;
  for (std::size_t i = 0; i < half; ++i) ASSERT_EQ(f[i], f[half + i]);
}

TEST(Extract, ZeroInputThroughBiasFreeNetIsZero) {
  agm::Rng rng(5);
  BranchConfig c = small();
  c.bias = false;
  BranchNet net(c, rng);
  const auto out = net.forward(agm::ad::constant(Tensor({2, 3, 32, 16}, 0.0)), false);
  for (double v : out->value.data) ASSERT_EQ(v, 0.0);
}

TEST(Extract, ResolutionMismatchNamesBothSizes) {
  agm::Rng rng(6);
  BranchNet net(small(agm::BranchTag::kHeadShoulder), rng);
  try {
    net.extract({agm::Image(20, 16)});
    FAIL();
  } catch (const agm::Error& e) {
    EXPECT_EQ(e.kind(), agm::ErrorKind::kShape);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("32x16"), std::string::npos) << msg;
    EXPECT_NE(msg.find("20x16"), std::string::npos) << msg;
  }
}

TEST(Extract, DefaultResolutions) {
  EXPECT_EQ(BranchConfig::global().in_h, 288);
  EXPECT_EQ(BranchConfig::global().in_w, 144);
  EXPECT_EQ(BranchConfig::head_shoulder().in_h, 128);
  EXPECT_EQ(BranchConfig::head_shoulder().in_w, 144);
  EXPECT_EQ(BranchConfig::global(2048).out_channels(), 2048);
}

TEST(Extract, EvalModeIsPure) {
  agm::Rng rng(7);
  BranchNet net(small(), rng);
  std::mt19937_64 g(8);
  const agm::Image img = testutil::random_image(32, 16, agm::Modality::kVisible, g);
  EXPECT_EQ(net.extract({img}).data, net.extract({img}).data);
}

TEST(Extract, BranchesHaveIndependentParameters) {
  agm::Rng a(9), b(9);
  BranchNet g(small(), a);
  BranchNet h(small(agm::BranchTag::kHeadShoulder), b);
  std::vector<agm::nn::NamedParam> pg, ph;
  g.collect("g", pg);
  h.collect("h", ph);
  ASSERT_EQ(pg.size(), ph.size());
  for (std::size_t i = 0; i < pg.size(); ++i) EXPECT_NE(pg[i].var.get(), ph[i].var.get());
}

TEST(Gem, UnitExponentIsAverage) {
  EXPECT_NEAR(agm::gem_pool(map_of({1, 2, 3, 4}), GemPooler(1.0))[0], 2.5, 1e-12);
}

TEST(Gem, ConstantMapForAnyExponent) {
  for (double p : {1.0, 2.0, 3.0, 7.5, 20.0})
    EXPECT_NEAR(agm::gem_pool(map_of({0.7, 0.7, 0.7}), GemPooler(p))[0], 0.7, 1e-12);
}

TEST(Gem, CubicExample) {
  // (1^3 + 2^3) / 2 = 4.5
  EXPECT_NEAR(agm::gem_pool(map_of({1, 2}), GemPooler(3.0))[0], std::cbrt(4.5), 1e-12);
  EXPECT_NEAR(agm::gem_pool(map_of({1, 2}), GemPooler(3.0))[0], 1.65096, 1e-5);
}

TEST(Gem, ClampsBelowEpsilon) {
  GemPooler pool(1.0, 1, 0.5);
  EXPECT_NEAR(agm::gem_pool(map_of({-3.0, 1.5}), pool)[0], 1.0, 1e-12);
}

TEST(Gem, RejectsInvalidParameters) {
  EXPECT_THROW(GemPooler(0.5), agm::Error);
  EXPECT_THROW(GemPooler(3.0, 1, 0.0), agm::Error);
}

TEST(Gem, ProjectKeepsExponentAtLeastOne) {
  GemPooler pool(3.0, 4);
  pool.p->value.data = {0.2, 1.0, 2.0, -5.0};
  pool.project();
  EXPECT_EQ(pool.p->value.data, (agm::TensorData{1.0, 1.0, 2.0, 1.0}));
}

TEST(Gem, PerChannelExponents) {
  GemPooler pool(1.0, 2);
  pool.p->value.data = {1.0, 3.0};
  const auto v = agm::gem_pool(map_of({1, 2, 1, 2}, 2), pool);
  EXPECT_NEAR(v[0], 1.5, 1e-12);
  EXPECT_NEAR(v[1], std::cbrt(4.5), 1e-12);
}

TEST(Gem, BatchedOpAgreesWithPerMapPooling) {
  agm::Rng rng(10);
  Tensor fmap = agm::nn::normal_tensor({3, 4, 2, 3}, 1.0, rng);
  GemPooler pool(3.0);
  const Tensor batched = pool(agm::ad::constant(fmap))->value;
  for (int n = 0; n < 3; ++n) {
    Tensor one({4, 2, 3});
    std::copy(fmap.data.begin() + n * 24, fmap.data.begin() + (n + 1) * 24, one.data.begin());
    const auto v = agm::gem_pool(one, pool);
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(batched[static_cast<std::size_t>(n * 4 + c)], v[c], 1e-12);
  }
}

TEST(GemProperty, UnitExponentMatchesAverageOnRandomMaps) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.01, 5.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(12);
    double mean = 0;
    for (auto& x : v) mean += (x = u(rng)) / 12;
    const double got = agm::gem_pool(map_of(v), GemPooler(1.0))[0];
    ASSERT_LE(std::abs(got - mean) / mean, 1e-6);
  }
}

TEST(GemProperty, LargeExponentApproachesMax) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 100; ++t) {
    // Well separated: one peak, the rest far below it.
    std::uniform_real_distribution<double> low(0.1, 1.0);
    std::vector<double> v(16);
    for (auto& x : v) x = low(rng);
    const double peak = 4.0 + t * 0.1;
    v[static_cast<std::size_t>(t % 16)] = peak;
    const double got = agm::gem_pool(map_of(v), GemPooler(64.0))[0];
    ASSERT_LE(got, peak);
    ASSERT_GE(got, 0.95 * peak);
  }
}

TEST(GemProperty, Monotone) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-1.0, 3.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> v(2 * 6);
    for (auto& x : v) x = u(rng);
    GemPooler pool(1.0 + t % 7);
    const auto before = agm::gem_pool(map_of(v, 2), pool);
    v[static_cast<std::size_t>(t % 12)] += std::abs(u(rng));
    const auto after = agm::gem_pool(map_of(v, 2), pool);
    for (int c = 0; c < 2; ++c) ASSERT_GE(after[c], before[c]);
  }
}

agm::EmbeddingBatch batch(const agm::Matrix& m, std::vector<int> labels, agm::BranchTag tag) {
  agm::EmbeddingBatch e;
  e.vectors = m;
  e.labels = std::move(labels);
  e.tag = tag;
  return e;
}

TEST(FuseConcat, SmallExample) {
  agm::Matrix g(1, 2), h(1, 1);
  g << 1, 2;
  h << 3;
  const auto j = agm::fuse_concat(batch(g, {5}, agm::BranchTag::kGlobal), batch(h, {5}, agm::BranchTag::kHeadShoulder));
  ASSERT_EQ(j.dim(), 3);
  EXPECT_EQ(j.vectors(0, 0), 1);
  EXPECT_EQ(j.vectors(0, 1), 2);
  EXPECT_EQ(j.vectors(0, 2), 3);
  EXPECT_EQ(j.labels, std::vector<int>{5});
  EXPECT_EQ(j.tag, agm::BranchTag::kJoint);
}

TEST(FuseConcat, FullWidthDimensions) {
  const agm::Matrix g = agm::Matrix::Ones(2, 2048), h = agm::Matrix::Zero(2, 2048);
  const auto j = agm::fuse_concat(batch(g, {0, 1}, agm::BranchTag::kGlobal), batch(h, {0, 1}, agm::BranchTag::kHeadShoulder));
  EXPECT_EQ(j.dim(), 4096);
  EXPECT_EQ(j.vectors.leftCols(2048), g);
}

TEST(FuseConcat, RejectsMisalignedLabels) {
  const agm::Matrix m = agm::Matrix::Ones(2, 3);
  EXPECT_THROW(agm::fuse_concat(batch(m, {0, 1}, agm::BranchTag::kGlobal), batch(m, {1, 0}, agm::BranchTag::kHeadShoulder)),
               agm::Error);
  EXPECT_THROW(agm::fuse_concat(batch(m, {0, 1}, agm::BranchTag::kGlobal), batch(agm::Matrix::Ones(1, 3), {0}, agm::BranchTag::kHeadShoulder)),
               agm::Error);
}

TEST(FuseConcatProperty, BlocksRecoverableBySlicing) {
  std::mt19937_64 rng(14);
  for (int t = 0; t < 20; ++t) {
    const auto g = testutil::random_embeddings(6, 4 + t % 3, 3, rng);
    const auto h = testutil::random_embeddings(6, 2 + t % 5, 3, rng);
    const auto j = agm::fuse_concat(g, h);
    EXPECT_EQ(j.vectors.leftCols(g.dim()), g.vectors);
    EXPECT_EQ(j.vectors.rightCols(h.dim()), h.vectors);
  }
}

}  // namespace
