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

#include <fstream>
#include <random>

#include "agm/checkpoint.hpp"
#include "test_util.hpp"

namespace {

namespace fs = std::filesystem;

agm::Checkpoint sample() {
  agm::Checkpoint ck;
  ck.header = {{"kind", "test"}, {"seed", 42}, {"note", "x"}};
  agm::Tensor a({2, 3});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.1 * static_cast<double>(i) - 0.25;
  ck.blocks["a"] = a;
  ck.blocks["scalar"] = agm::Tensor({1}, 3.5);
  ck.blocks["empty"] = agm::Tensor({0});
  return ck;
}

void truncate(const fs::path& p, std::uintmax_t keep) { fs::resize_file(p, keep); }

TEST(Checkpoint, RoundTrip) {
  testutil::TempDir dir("ckpt");
  const auto ck = sample();
  agm::save_checkpoint(dir.path() / "x.ckpt", ck);
  const auto back = agm::load_checkpoint(dir.path() / "x.ckpt");
  EXPECT_EQ(back.header, ck.header);
  ASSERT_EQ(back.blocks.size(), ck.blocks.size());
  for (const auto& [name, t] : ck.blocks) {
    EXPECT_EQ(back.block(name).shape, t.shape) << name;
    EXPECT_EQ(back.block(name).data, t.data) << name;
  }
}

TEST(Checkpoint, MissingBlockIsAnError) { EXPECT_THROW(sample().block("nope"), agm::Error); }

TEST(Checkpoint, BadMagic) {
  testutil::TempDir dir("ckpt");
  std::ofstream(dir.path() / "bad.ckpt") << "NOTACKPTxxxxxxxxxxxx";
  try {
    agm::load_checkpoint(dir.path() / "bad.ckpt");
    FAIL();
  } catch (const agm::Error& e) {
    EXPECT_EQ(e.kind(), agm::ErrorKind::kData);
  }
}

TEST(Checkpoint, WrongVersion) {
  testutil::TempDir dir("ckpt");
  const fs::path p = dir.path() / "v.ckpt";
  agm::save_checkpoint(p, sample());
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(8);
  const std::uint32_t v = 99;
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
  f.close();
  try {
    agm::load_checkpoint(p);
    FAIL();
  } catch (const agm::Error& e) {
    EXPECT_NE(std::string(e.what()).find("99"), std::string::npos);
  }
}

TEST(Checkpoint, TruncatedFileDetectedAtEveryLength) {
  testutil::TempDir dir("ckpt");
  const fs::path p = dir.path() / "t.ckpt";
  agm::save_checkpoint(p, sample());
  const auto full = fs::file_size(p);
  for (std::uintmax_t keep = 0; keep < full; keep += 7) {
    agm::save_checkpoint(p, sample());
    truncate(p, keep);
    EXPECT_THROW(agm::load_checkpoint(p), agm::Error) << keep;
  }
}

TEST(Checkpoint, MissingFileIsIoError) {
  try {
    agm::load_checkpoint("/nonexistent/x.ckpt");
    FAIL();
  } catch (const agm::Error& e) {
    EXPECT_EQ(e.kind(), agm::ErrorKind::kIo);
  }
}

TEST(Checkpoint, StoreRestoreParameters) {
  agm::Rng rng(1);
  agm::nn::Conv2d conv(2, 3, 3, 1, 1, true, rng);
  agm::nn::BatchNorm2d bn(3);
  bn.stats.running_mean[1] = 0.7;
  std::vector<agm::nn::NamedParam> params;
  std::vector<agm::nn::NamedBuffer> bufs;
  conv.collect("c", params);
  bn.collect("bn", params);
  bn.buffers("bn", bufs);
  agm::Checkpoint ck;
  agm::store_blocks(ck, params, bufs);
  EXPECT_EQ(ck.blocks.size(), 6u);

  agm::Rng other(2);
  agm::nn::Conv2d conv2(2, 3, 3, 1, 1, true, other);
  agm::nn::BatchNorm2d bn2(3);
  std::vector<agm::nn::NamedParam> p2;
  std::vector<agm::nn::NamedBuffer> b2;
  conv2.collect("c", p2);
  bn2.collect("bn", p2);
  bn2.buffers("bn", b2);
  agm::restore_blocks(ck, p2, b2);
  EXPECT_EQ(conv2.weight->value.data, conv.weight->value.data);
  EXPECT_EQ(bn2.stats.running_mean[1], 0.7);
}

TEST(Checkpoint, RestoreShapeMismatch) {
  agm::Rng rng(1);
  agm::nn::Conv2d small(2, 3, 3, 1, 1, false, rng), big(2, 4, 3, 1, 1, false, rng);
  std::vector<agm::nn::NamedParam> ps, pb;
  small.collect("c", ps);
  big.collect("c", pb);
  agm::Checkpoint ck;
  agm::store_blocks(ck, ps);
  try {
    agm::restore_blocks(ck, pb);
    FAIL();
  } catch (const agm::Error& e) {
    EXPECT_EQ(e.kind(), agm::ErrorKind::kShape);
  }
}

TEST(ConfigHash, StableAndSensitive) {
  EXPECT_EQ(agm::config_hash(""), "cbf29ce484222325");
  EXPECT_EQ(agm::config_hash("a=1"), agm::config_hash("a=1"));
  EXPECT_NE(agm::config_hash("a=1"), agm::config_hash("a=2"));
  EXPECT_EQ(agm::config_hash("xyz").size(), 16u);
}

TEST(Embeddings, RoundTripWithSidecar) {
  testutil::TempDir dir("emb");
  std::mt19937_64 rng(3);
  auto e = testutil::random_embeddings(7, 5, 3, rng);
  e.tag = agm::BranchTag::kJoint;
  agm::save_embeddings(dir.path() / "q.emb", e, {{"split", "query"}});
  const auto back = agm::load_embeddings(dir.path() / "q.emb");
  EXPECT_EQ(back.vectors, e.vectors);
  EXPECT_EQ(back.labels, e.labels);
  std::ifstream side(dir.path() / "q.emb.json");
  const auto j = nlohmann::json::parse(side);
  EXPECT_EQ(j["num"], 7);
  EXPECT_EQ(j["dim"], 5);
  EXPECT_EQ(j["split"], "query");
  EXPECT_EQ(j["labels"].get<std::vector<int>>(), e.labels);
}

TEST(Embeddings, CorruptFileRejected) {
  testutil::TempDir dir("emb");
  std::mt19937_64 rng(4);
  agm::save_embeddings(dir.path() / "q.emb", testutil::random_embeddings(4, 2, 2, rng));
  truncate(dir.path() / "q.emb", 30);
  EXPECT_THROW(agm::load_embeddings(dir.path() / "q.emb"), agm::Error);
  std::ofstream(dir.path() / "bad.emb") << "garbage";
  EXPECT_THROW(agm::load_embeddings(dir.path() / "bad.emb"), agm::Error);
}

}  // namespace
