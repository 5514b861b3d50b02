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

// Binary containers: model checkpoints (JSON header + named f64 blocks) and
// embedding exports (N x D matrix + labels, with a JSON sidecar).
//
// Checkpoint layout, little-endian:
//   "AGMCKPT\0" | u32 version | u64 header_len | header JSON |
//   u32 block_count | { u32 name_len | name | u32 rank | i32 dims[rank] |
//                       f64 data[prod(dims)] } * block_count

#ifndef AGM_CHECKPOINT_HPP_
#define AGM_CHECKPOINT_HPP_

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "agm/backbone.hpp"
#include "agm/common.hpp"
#include "agm/nn.hpp"
#include "agm/tensor.hpp"
#include "json.hpp"

namespace agm {

inline constexpr char kCheckpointMagic[8] = {'A', 'G', 'M', 'C', 'K', 'P', 'T', '\0'};
inline constexpr char kEmbeddingMagic[8] = {'A', 'G', 'M', 'E', 'M', 'B', '1', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::ordered_json header;  // kind, architecture, seed, epoch, config_hash, ...
  std::map<std::string, Tensor> blocks;

  const Tensor& block(const std::string& name) const {
    auto it = blocks.find(name);
    if (it == blocks.end()) fail(ErrorKind::kData, "checkpoint has no block '", name, "'");
    return it->second;
  }
};

/// FNV-1a over a string, as 16 hex digits.
inline std::string config_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) fail(ErrorKind::kData, "truncated file ", path.string());
  return v;
}

inline std::string get_bytes(std::istream& is, std::uint64_t n, const std::filesystem::path& path) {
  if (n > (1ULL << 32)) fail(ErrorKind::kData, "corrupt length field in ", path.string());
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) fail(ErrorKind::kData, "truncated file ", path.string());
  return s;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::kIo, "cannot write ", path.string());
  return os;
}

inline void check_magic(std::istream& is, const char (&magic)[8], const std::filesystem::path& path, const char* what) {
  char m[8];
  if (!is.read(m, 8) || std::memcmp(m, magic, 8) != 0) fail(ErrorKind::kData, path.string(), " is not ", what);
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  auto os = detail::open_out(path);
  os.write(kCheckpointMagic, 8);
  detail::put(os, kCheckpointVersion);
  const std::string header = ckpt.header.dump();
  detail::put(os, static_cast<std::uint64_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  detail::put(os, static_cast<std::uint32_t>(ckpt.blocks.size()));
  for (const auto& [name, t] : ckpt.blocks) {
    detail::put(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put(os, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) detail::put(os, static_cast<std::int32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!os) fail(ErrorKind::kIo, "failed writing ", path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::kIo, "cannot open checkpoint ", path.string());
  detail::check_magic(is, kCheckpointMagic, path, "an AGM checkpoint");
  const auto version = detail::get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    fail(ErrorKind::kData, "checkpoint ", path.string(), " has format version ", version, ", expected ",
         kCheckpointVersion);
  }
  Checkpoint ckpt;
  const auto hlen = detail::get<std::uint64_t>(is, path);
  try {
    ckpt.header = nlohmann::ordered_json::parse(detail::get_bytes(is, hlen, path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, "checkpoint header of ", path.string(), " is not valid JSON: ", e.what());
  }
  const auto nblocks = detail::get<std::uint32_t>(is, path);
  for (std::uint32_t b = 0; b < nblocks; ++b) {
    const auto nlen = detail::get<std::uint32_t>(is, path);
    std::string name = detail::get_bytes(is, nlen, path);
    const auto rank = detail::get<std::uint32_t>(is, path);
    if (rank > 8) fail(ErrorKind::kData, "block ", name, " in ", path.string(), " has implausible rank ", rank);
    std::vector<int> shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = detail::get<std::int32_t>(is, path);
      if (d < 0) fail(ErrorKind::kData, "block ", name, " has a negative dimension");
      shape.push_back(d);
    }
    Tensor t(shape);
    if (!t.data.empty() &&
        !is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double)))) {
      fail(ErrorKind::kData, "truncated block ", name, " in ", path.string());
    }
    ckpt.blocks.emplace(std::move(name), std::move(t));
  }
  return ckpt;
}

/// Copies parameter values and buffers into checkpoint blocks.
inline void store_blocks(Checkpoint& ckpt, const std::vector<nn::NamedParam>& params,
                         const std::vector<nn::NamedBuffer>& buffers = {}) {
  for (const auto& p : params) ckpt.blocks[p.name] = p.var->value;
  for (const auto& b : buffers) ckpt.blocks[b.name] = *b.tensor;
}

/// Restores parameters and buffers by name; every one must be present with
/// a matching shape.
inline void restore_blocks(const Checkpoint& ckpt, const std::vector<nn::NamedParam>& params,
                           const std::vector<nn::NamedBuffer>& buffers = {}) {
  auto copy = [&](const std::string& name, Tensor& dst) {
    const Tensor& src = ckpt.block(name);
    if (src.shape != dst.shape) {
      fail(ErrorKind::kShape, "checkpoint block ", name, " has shape ", src.shape_str(), ", model expects ",
           dst.shape_str());
    }
    dst.data = src.data;
  };
  for (const auto& p : params) copy(p.name, p.var->value);
  for (const auto& b : buffers) copy(b.name, *b.tensor);
}

// ---------------------------------------------------------------------------
// Embedding export.
//
//   "AGMEMB1\0" | u64 N | u64 D | i32 labels[N] | f64 row-major data[N*D]

inline void save_embeddings(const std::filesystem::path& path, const EmbeddingBatch& emb,
                            const nlohmann::ordered_json& extra = {}) {
  emb.validate();
  {
    auto os = detail::open_out(path);
    os.write(kEmbeddingMagic, 8);
    detail::put(os, static_cast<std::uint64_t>(emb.size()));
    detail::put(os, static_cast<std::uint64_t>(emb.dim()));
    for (int y : emb.labels) detail::put(os, static_cast<std::int32_t>(y));
    for (Eigen::Index r = 0; r < emb.size(); ++r)
      for (Eigen::Index c = 0; c < emb.dim(); ++c) detail::put(os, emb.vectors(r, c));
    if (!os) fail(ErrorKind::kIo, "failed writing ", path.string());
  }
  nlohmann::ordered_json side{{"format", "agm-embeddings"},
                              {"version", 1},
                              {"num", emb.size()},
                              {"dim", emb.dim()},
                              {"branch", to_string(emb.tag)},
                              {"labels", emb.labels}};
  for (auto it = extra.begin(); it != extra.end(); ++it) side[it.key()] = it.value();
  auto js = detail::open_out(std::filesystem::path(path.string() + ".json"));
  js << side.dump(2) << '\n';
}

inline EmbeddingBatch load_embeddings(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::kIo, "cannot open embeddings ", path.string());
  detail::check_magic(is, kEmbeddingMagic, path, "an AGM embedding file");
  const auto n = detail::get<std::uint64_t>(is, path);
  const auto d = detail::get<std::uint64_t>(is, path);
  if (n > (1ULL << 31) || d > (1ULL << 31)) fail(ErrorKind::kData, "corrupt embedding header in ", path.string());
  EmbeddingBatch emb;
  emb.tag = BranchTag::kJoint;
  emb.labels.resize(n);
  for (auto& y : emb.labels) y = detail::get<std::int32_t>(is, path);
  emb.vectors.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index r = 0; r < emb.size(); ++r)
    for (Eigen::Index c = 0; c < emb.dim(); ++c) emb.vectors(r, c) = detail::get<double>(is, path);
  return emb;
}

}  // namespace agm

#endif  // AGM_CHECKPOINT_HPP_
