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

// Cross-modality retrieval evaluation: Euclidean ranking, CMC, mAP, mINP.

#ifndef AGM_METRICS_HPP_
#define AGM_METRICS_HPP_

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <vector>

#include "agm/backbone.hpp"
#include "agm/common.hpp"
#include "json.hpp"

namespace agm {

/// Query x gallery mask; a set entry removes that gallery item from the
/// query's ranking (e.g. same camera, or the query itself).
struct ExclusionMask {
  int num_query = 0;
  int num_gallery = 0;
  std::vector<std::uint8_t> excluded;

  ExclusionMask() = default;
  ExclusionMask(int nq, int ng) : num_query(nq), num_gallery(ng), excluded(static_cast<std::size_t>(nq) * ng, 0) {}

  bool operator()(int q, int g) const { return excluded[static_cast<std::size_t>(q) * num_gallery + g] != 0; }
  void set(int q, int g, bool value = true) {
    excluded[static_cast<std::size_t>(q) * num_gallery + g] = value ? 1 : 0;
  }
};

/// Per query: unmasked gallery indices by ascending distance (ties by
/// index) and whether each shares the query identity.
struct RankingResult {
  std::vector<std::vector<int>> order;
  std::vector<std::vector<std::uint8_t>> relevant;
  int num_gallery = 0;

  std::size_t num_queries() const { return order.size(); }
};

inline RankingResult rank(const EmbeddingBatch& query, const EmbeddingBatch& gallery,
                          const std::optional<ExclusionMask>& exclusion = std::nullopt) {
  query.validate();
  gallery.validate();
  if (query.dim() != gallery.dim()) {
    fail(ErrorKind::kShape, "rank: query dim ", query.dim(), " vs gallery dim ", gallery.dim());
  }
  const int nq = static_cast<int>(query.size()), ng = static_cast<int>(gallery.size());
  if (exclusion && (exclusion->num_query != nq || exclusion->num_gallery != ng)) {
    fail(ErrorKind::kShape, "rank: exclusion mask is ", exclusion->num_query, "x", exclusion->num_gallery,
         ", expected ", nq, "x", ng);
  }
  RankingResult r;
  r.num_gallery = ng;
  r.order.resize(nq);
  r.relevant.resize(nq);
  std::vector<int> offenders;
  std::vector<double> dist(ng);
  for (int q = 0; q < nq; ++q) {
    std::vector<int> idx;
    idx.reserve(ng);
    for (int g = 0; g < ng; ++g) {
      if (exclusion && (*exclusion)(q, g)) continue;
      dist[g] = (query.vectors.row(q) - gallery.vectors.row(g)).squaredNorm();
      idx.push_back(g);
    }
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return dist[a] < dist[b]; });
    std::vector<std::uint8_t> rel(idx.size());
    bool any = false;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      rel[i] = gallery.labels[idx[i]] == query.labels[q];
      any = any || rel[i];
    }
    if (!any) offenders.push_back(q);
    r.order[q] = std::move(idx);
    r.relevant[q] = std::move(rel);
  }
  if (!offenders.empty()) {
    std::ostringstream os;
    for (std::size_t i = 0; i < offenders.size(); ++i) {
      os << (i ? ", " : "") << "query " << offenders[i] << " (id " << query.labels[offenders[i]] << ")";
    }
    fail(ErrorKind::kData, "query identities absent from the unmasked gallery: ", os.str());
  }
  return r;
}

/// Fraction of queries with a relevant item in the top k.
inline double cmc(const RankingResult& r, int k) {
  if (k < 1) fail(ErrorKind::kConfig, "cmc rank k must be >= 1, got ", k);
  if (r.num_queries() == 0) return 0;
  int hits = 0;
  for (const auto& rel : r.relevant) {
    const auto end = rel.begin() + std::min<std::ptrdiff_t>(k, static_cast<std::ptrdiff_t>(rel.size()));
    hits += std::find(rel.begin(), end, 1) != end;
  }
  return static_cast<double>(hits) / static_cast<double>(r.num_queries());
}

/// Mean over queries of the average precision at each relevant rank.
inline double mean_ap(const RankingResult& r) {
  if (r.num_queries() == 0) return 0;
  double total = 0;
  for (const auto& rel : r.relevant) {
    int found = 0;
    double ap = 0;
    for (std::size_t i = 0; i < rel.size(); ++i) {
      if (!rel[i]) continue;
      ++found;
      ap += static_cast<double>(found) / static_cast<double>(i + 1);
    }
    total += found ? ap / found : 0.0;
  }
  return total / static_cast<double>(r.num_queries());
}

/// Mean over queries of |relevant| / rank of the last relevant item.
inline double mean_inp(const RankingResult& r) {
  if (r.num_queries() == 0) return 0;
  double total = 0;
  for (const auto& rel : r.relevant) {
    int count = 0;
    std::size_t last = 0;
    for (std::size_t i = 0; i < rel.size(); ++i) {
      if (rel[i]) {
        ++count;
        last = i + 1;
      }
    }
    total += last ? static_cast<double>(count) / static_cast<double>(last) : 0.0;
  }
  return total / static_cast<double>(r.num_queries());
}

struct MetricsSummary {
  double rank1 = 0, rank5 = 0, rank10 = 0, rank20 = 0;
  double mAP = 0, mINP = 0;
  int num_query = 0, num_gallery = 0;

  nlohmann::ordered_json to_json() const {
    return {{"rank1", rank1}, {"rank5", rank5},     {"rank10", rank10},       {"rank20", rank20},
            {"mAP", mAP},     {"mINP", mINP},       {"num_query", num_query}, {"num_gallery", num_gallery}};
  }
};

inline MetricsSummary summarize(const RankingResult& r) {
  MetricsSummary s;
  s.rank1 = cmc(r, 1);
  s.rank5 = cmc(r, 5);
  s.rank10 = cmc(r, 10);
  s.rank20 = cmc(r, 20);
  s.mAP = mean_ap(r);
  s.mINP = mean_inp(r);
  s.num_query = static_cast<int>(r.num_queries());
  s.num_gallery = r.num_gallery;
  return s;
}

}  // namespace agm

#endif  // AGM_METRICS_HPP_
