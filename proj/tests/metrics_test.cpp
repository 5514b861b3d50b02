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

#include <algorithm>
#include <numeric>
#include <random>

#include "agm/metrics.hpp"
#include "oracles/metrics_oracle.hpp"
#include "test_util.hpp"

namespace {

using agm::EmbeddingBatch;
using agm::Matrix;
using agm::RankingResult;

EmbeddingBatch emb(std::vector<std::vector<double>> rows, std::vector<int> labels) {
  EmbeddingBatch e;
  e.vectors.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) e.vectors(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  e.labels = std::move(labels);
  return e;
}

RankingResult pattern(std::vector<std::vector<std::uint8_t>> rel) {
  RankingResult r;
  for (auto& row : rel) {
    std::vector<int> order(row.size());
    std::iota(order.begin(), order.end(), 0);
    r.order.push_back(order);
    r.num_gallery = static_cast<int>(row.size());
    r.relevant.push_back(std::move(row));
  }
  return r;
}

TEST(Rank, DuplicateOfQueryRanksFirst) {
  const auto q = emb({{0.3, -1.0}}, {7});
  const auto g = emb({{5, 5}, {1, 1}, {-2, 0}, {0.3, -1.0}, {0.4, -1.0}}, {1, 2, 3, 7, 4});
  EXPECT_EQ(agm::rank(q, g).order[0][0], 3);
}

TEST(Rank, TiesGoToLowerIndex) {
  const auto q = emb({{0.0}}, {1});
  const auto g = emb({{-1.0}, {1.0}, {1.0}}, {1, 1, 2});
  EXPECT_EQ(agm::rank(q, g).order[0], (std::vector<int>{0, 1, 2}));
}

TEST(Rank, OneDimensionalSort) {
  const auto r = agm::rank(emb({{0.0}}, {1}), emb({{3.0}, {1.0}, {2.0}}, {1, 2, 3}));
  EXPECT_EQ(r.order[0], (std::vector<int>{1, 2, 0}));
  EXPECT_EQ(r.relevant[0], (std::vector<std::uint8_t>{0, 0, 1}));
}

TEST(Rank, AbsentIdentityListsOffenders) {
  try {
    agm::rank(emb({{0.0}, {1.0}, {2.0}}, {1, 9, 8}), emb({{3.0}, {1.0}}, {1, 2}));
    FAIL();
  } catch (const agm::Error& e) {
    EXPECT_EQ(e.kind(), agm::ErrorKind::kData);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("id 9"), std::string::npos) << msg;
    EXPECT_NE(msg.find("id 8"), std::string::npos) << msg;
  }
}

TEST(Rank, MaskCanRemoveTheOnlyMatch) {
  agm::ExclusionMask mask(1, 2);
  mask.set(0, 0);
  EXPECT_THROW(agm::rank(emb({{0.0}}, {1}), emb({{0.0}, {1.0}}, {1, 2}), mask), agm::Error);
}

TEST(Rank, DimensionMismatch) {
  EXPECT_THROW(agm::rank(emb({{0.0, 1.0}}, {1}), emb({{0.0}}, {1})), agm::Error);
}

TEST(Cmc, RelevantFirst) { EXPECT_EQ(agm::cmc(pattern({{1, 0}, {1, 1, 0}}), 1), 1.0); }

TEST(Cmc, DirectCount) {
  const auto r = pattern({{0, 1, 0}});
  EXPECT_EQ(agm::cmc(r, 1), 0.0);
  EXPECT_EQ(agm::cmc(r, 2), 1.0);
}

TEST(Cmc, RejectsNonPositiveK) { EXPECT_THROW(agm::cmc(pattern({{1}}), 0), agm::Error); }

TEST(MeanAp, AllRelevantFirst) { EXPECT_EQ(agm::mean_ap(pattern({{1, 1, 0, 0}})), 1.0); }

TEST(MeanAp, Patterns) {
  EXPECT_NEAR(agm::mean_ap(pattern({{1, 0, 1}})), (1.0 + 2.0 / 3) / 2, 1e-15);
  EXPECT_NEAR(agm::mean_ap(pattern({{0, 1, 1}})), (0.5 + 2.0 / 3) / 2, 1e-15);
}

TEST(MeanInp, Examples) {
  EXPECT_EQ(agm::mean_inp(pattern({{1, 1, 1, 0}})), 1.0);
  EXPECT_NEAR(agm::mean_inp(pattern({{1, 0, 1}})), 2.0 / 3, 1e-15);
  EXPECT_NEAR(agm::mean_inp(pattern({{0, 0, 0, 0, 1}})), 0.2, 1e-15);
}

TEST(Summary, JsonFields) {
  const auto s = agm::summarize(pattern({{0, 1}, {1, 0}}));
  const auto j = s.to_json();
  for (const char* k : {"rank1", "rank5", "rank10", "rank20", "mAP", "mINP", "num_query", "num_gallery"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["rank1"], 0.5);
  EXPECT_EQ(j["num_query"], 2);
}

TEST(BruteForce, SinglePair) {
  const auto b = oracle::brute_force_metrics({{1.0}}, {3}, {{2.0}}, {3});
  EXPECT_EQ(b.cmc, std::vector<double>{1.0});
  EXPECT_EQ(b.map, 1.0);
  EXPECT_EQ(b.minp, 1.0);
}

struct Instance {
  EmbeddingBatch query, gallery;
  std::vector<std::vector<bool>> excluded;
  agm::ExclusionMask mask;
};

Instance random_instance(std::mt19937_64& rng, bool with_mask) {
  std::uniform_int_distribution<int> nqd(1, 20), ngd(20, 100), idd(2, 10), dd(1, 6);
  const int nq = nqd(rng), ng = ngd(rng), ids = idd(rng), d = dd(rng);
  Instance in;
  in.gallery = testutil::random_embeddings(ng, d, ids, rng);
  in.query = testutil::random_embeddings(nq, d, ids, rng);
  in.excluded.assign(static_cast<std::size_t>(nq), std::vector<bool>(static_cast<std::size_t>(ng), false));
  in.mask = agm::ExclusionMask(nq, ng);
  if (with_mask) {
    std::bernoulli_distribution drop(0.2);
    for (int q = 0; q < nq; ++q)
      for (int g = 0; g < ng; ++g) {
        // Keep the first copy of every identity so each query stays answerable.
        if (g >= ids && drop(rng)) {
          in.excluded[q][g] = true;
          in.mask.set(q, g);
        }
      }
  }
  return in;
}

TEST(MetricsProperty, FastPathMatchesBruteForce) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto in = random_instance(rng, t % 2 == 1);
    const auto r = agm::rank(in.query, in.gallery, in.mask);
    const auto b = oracle::brute_force_metrics(testutil::rows(in.query.vectors), in.query.labels,
                                               testutil::rows(in.gallery.vectors), in.gallery.labels, in.excluded);
    for (int k = 1; k <= in.gallery.size(); ++k) ASSERT_NEAR(agm::cmc(r, k), b.cmc[static_cast<std::size_t>(k - 1)], 1e-9);
    ASSERT_NEAR(agm::mean_ap(r), b.map, 1e-9);
    ASSERT_NEAR(agm::mean_inp(r), b.minp, 1e-9);
  }
}

TEST(MetricsProperty, EmptyMaskEqualsNoMask) {
  std::mt19937_64 rng(2);
  const auto in = random_instance(rng, false);
  const auto a = agm::rank(in.query, in.gallery);
  const auto b = agm::rank(in.query, in.gallery, in.mask);
  EXPECT_EQ(a.order, b.order);
  EXPECT_EQ(a.relevant, b.relevant);
}

TEST(MetricsProperty, CmcMonotoneAndBounded) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto in = random_instance(rng, false);
    const auto r = agm::rank(in.query, in.gallery);
    double prev = 0;
    for (int k = 1; k <= in.gallery.size(); ++k) {
      const double c = agm::cmc(r, k);
      ASSERT_GE(c, prev);
      prev = c;
    }
    EXPECT_EQ(agm::cmc(r, static_cast<int>(in.gallery.size())), 1.0);
    for (double m : {agm::mean_ap(r), agm::mean_inp(r)}) {
      EXPECT_GE(m, 0.0);
      EXPECT_LE(m, 1.0);
    }
  }
}

TEST(MetricsProperty, InvariantUnderGalleryPermutation) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const auto in = random_instance(rng, false);
    std::vector<int> perm(static_cast<std::size_t>(in.gallery.size()));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    EmbeddingBatch shuffled = in.gallery;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      shuffled.vectors.row(static_cast<Eigen::Index>(i)) = in.gallery.vectors.row(perm[i]);
      shuffled.labels[i] = in.gallery.labels[static_cast<std::size_t>(perm[i])];
    }
    const auto a = agm::summarize(agm::rank(in.query, in.gallery));
    const auto b = agm::summarize(agm::rank(in.query, shuffled));
    EXPECT_NEAR(a.mAP, b.mAP, 1e-12);
    EXPECT_NEAR(a.mINP, b.mINP, 1e-12);
    EXPECT_NEAR(a.rank1, b.rank1, 1e-12);
    EXPECT_NEAR(a.rank10, b.rank10, 1e-12);
  }
}

TEST(MetricsProperty, PerfectEmbeddingsScoreOne) {
  std::mt19937_64 rng(5);
  std::vector<std::vector<double>> g, q;
  std::vector<int> gy, qy;
  for (int id = 0; id < 6; ++id) {
    for (int k = 0; k < 3; ++k) {
      g.push_back({id * 10.0 + k * 0.01, 0});
      gy.push_back(id);
    }
    q.push_back({id * 10.0, 0.1});
    qy.push_back(id);
  }
  const auto s = agm::summarize(agm::rank(emb(q, qy), emb(g, gy)));
  EXPECT_EQ(s.mAP, 1.0);
  EXPECT_EQ(s.mINP, 1.0);
  EXPECT_EQ(s.rank1, 1.0);
}

}  // namespace
