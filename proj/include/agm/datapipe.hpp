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

// Dataset indexing, PK batch sampling and a procedural two-modality
// person-image generator.

#ifndef AGM_DATAPIPE_HPP_
#define AGM_DATAPIPE_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "agm/common.hpp"
#include "agm/image.hpp"
#include "agm/image_io.hpp"

namespace agm {

namespace fs = std::filesystem;

enum class Layout { kFlatManifest, kIdDirs, kAuto };

inline Layout parse_layout(std::string_view s) {
  if (s == "flat_manifest" || s == "manifest") return Layout::kFlatManifest;
  if (s == "id_dirs") return Layout::kIdDirs;
  if (s == "auto") return Layout::kAuto;
  fail(ErrorKind::kConfig, "unknown dataset layout '", s, "'");
}

struct Record {
  fs::path path;
  int identity = 0;           // contiguous class index
  int original_identity = 0;  // id as found on disk
  Modality modality = Modality::kVisible;
  int camera = -1;
};

struct DatasetIndex {
  fs::path root;
  std::vector<Record> records;
  std::vector<int> original_ids;  // sorted; position = class index

  int num_classes() const { return static_cast<int>(original_ids.size()); }
  std::size_t count(Modality m) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [m](const Record& r) { return r.modality == m; }));
  }
  std::size_t identities_in(Modality m) const {
    std::set<int> ids;
    for (const auto& r : records) if (r.modality == m) ids.insert(r.identity);
    return ids.size();
  }

  Image load(std::size_t i) const {
    const Record& r = records.at(i);
    Image img = read_png(r.path, r.modality);
    img.identity = r.identity;
    if (r.camera >= 0) img.camera = r.camera;
    return img;
  }
};

namespace detail {

// "Visible side" (visible or grayed visible) vs infrared.
inline bool infrared_side(Modality m) { return m == Modality::kInfrared; }

inline void remap_identities(DatasetIndex& index) {
  std::set<int> ids;
  for (const auto& r : index.records) ids.insert(r.original_identity);
  index.original_ids.assign(ids.begin(), ids.end());
  std::map<int, int> to_class;
  for (std::size_t i = 0; i < index.original_ids.size(); ++i) to_class[index.original_ids[i]] = static_cast<int>(i);
  for (auto& r : index.records) r.identity = to_class[r.original_identity];
}

inline void validate_both_modalities(const DatasetIndex& index) {
  std::map<int, std::array<bool, 2>> seen;
  for (const auto& r : index.records) seen[r.original_identity][infrared_side(r.modality) ? 1 : 0] = true;
  std::vector<int> bad;
  for (const auto& [id, s] : seen) if (!s[0] || !s[1]) bad.push_back(id);
  if (!bad.empty()) {
    std::ostringstream os;
    for (std::size_t i = 0; i < bad.size(); ++i) os << (i ? ", " : "") << bad[i];
    fail(ErrorKind::kData, "identities present in only one modality: ", os.str());
  }
}

// Filenames like "c3_0007.png" carry a camera id.
inline int camera_from_name(const std::string& stem) {
  if (stem.size() >= 2 && stem[0] == 'c' && std::isdigit(static_cast<unsigned char>(stem[1]))) {
    return std::stoi(stem.substr(1));
  }
  return -1;
}

inline int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::kData, "cannot parse ", what, " '", s, "'");
  }
}

}  // namespace detail

/// Indexes a dataset root. `require_both_modalities` enforces the training
/// split rule that every identity has visible and infrared images.
inline DatasetIndex load_dataset(const fs::path& root, Layout layout = Layout::kAuto,
                                 bool require_both_modalities = true) {
  if (!fs::is_directory(root)) fail(ErrorKind::kData, "dataset root '", root.string(), "' is not a directory");
  if (layout == Layout::kAuto) layout = fs::exists(root / "manifest.csv") ? Layout::kFlatManifest : Layout::kIdDirs;
  DatasetIndex index;
  index.root = root;
  if (layout == Layout::kFlatManifest) {
    std::ifstream in(root / "manifest.csv");
    if (!in) fail(ErrorKind::kData, "cannot open '", (root / "manifest.csv").string(), "'");
    std::string line;
    std::getline(in, line);
    if (line.rfind("path,identity,modality,camera", 0) != 0) {
      fail(ErrorKind::kData, "manifest header must be 'path,identity,modality,camera'");
    }
    int lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::vector<std::string> cols;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cols.push_back(cell);
      if (cols.size() != 4) fail(ErrorKind::kData, "manifest line ", lineno, " has ", cols.size(), " columns");
      Record r;
      r.path = root / cols[0];
      r.original_identity = detail::parse_int(cols[1], "identity");
      r.modality = parse_modality(cols[2]);
      r.camera = cols[3].empty() ? -1 : detail::parse_int(cols[3], "camera");
      if (!fs::exists(r.path)) fail(ErrorKind::kData, "manifest references missing file '", r.path.string(), "'");
      index.records.push_back(std::move(r));
    }
  } else {
    for (Modality m : {Modality::kVisible, Modality::kGrayscale, Modality::kInfrared}) {
      const fs::path dir = root / to_string(m);
      if (!fs::is_directory(dir)) continue;
      std::vector<fs::path> id_dirs;
      for (const auto& e : fs::directory_iterator(dir)) if (e.is_directory()) id_dirs.push_back(e.path());
      std::sort(id_dirs.begin(), id_dirs.end());
      for (const auto& id_dir : id_dirs) {
        const int id = detail::parse_int(id_dir.filename().string(), "identity directory");
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(id_dir)) {
          if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
          index.records.push_back({f, 0, id, m, detail::camera_from_name(f.stem().string())});
        }
      }
    }
  }
  if (index.records.empty()) fail(ErrorKind::kData, "dataset '", root.string(), "' contains no images");
  detail::remap_identities(index);
  if (require_both_modalities) detail::validate_both_modalities(index);
  return index;
}

inline void write_manifest(const DatasetIndex& index, const fs::path& root) {
  std::ofstream out(root / "manifest.csv", std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write manifest under '", root.string(), "'");
  out << "path,identity,modality,camera\n";
  for (const auto& r : index.records) {
    out << fs::relative(r.path, root).generic_string() << ',' << r.original_identity << ','
        << to_string(r.modality) << ',' << r.camera << '\n';
  }
}

// ---------------------------------------------------------------------------
// PK sampling.

/// Batches of P identities x K samples. Within an identity the K draws are
/// split between the visible side and the infrared side whenever both
/// exist, so every batch mixes modalities.
class PkSampler {
 public:
  PkSampler(std::vector<int> labels, std::vector<bool> is_infrared, int p, int k, std::uint64_t seed)
      : labels_(std::move(labels)), is_ir_(std::move(is_infrared)), p_(p), k_(k), seed_(seed) {
    if (p_ < 2) fail(ErrorKind::kConfig, "PK sampling needs P >= 2, got ", p_);
    if (k_ < 2) fail(ErrorKind::kConfig, "PK sampling needs K >= 2, got ", k_);
    if (labels_.size() != is_ir_.size()) fail(ErrorKind::kShape, "PK sampler: label/modality size mismatch");
    for (std::size_t i = 0; i < labels_.size(); ++i) pools_[labels_[i]][is_ir_[i] ? 1 : 0].push_back(i);
    for (const auto& kv : pools_) ids_.push_back(kv.first);
    if (static_cast<int>(ids_.size()) < p_) {
      fail(ErrorKind::kConfig, "PK sampling needs P <= number of identities (", p_, " > ", ids_.size(), ")");
    }
    const int by_ids = (static_cast<int>(ids_.size()) + p_ - 1) / p_;
    const int by_samples = static_cast<int>(labels_.size() / static_cast<std::size_t>(p_ * k_));
    batches_per_epoch_ = std::max(by_ids, by_samples);
  }

  int batch_size() const { return p_ * k_; }
  int batches_per_epoch() const { return batches_per_epoch_; }

  std::vector<std::vector<std::size_t>> epoch(int e) const {
    Rng rng(derive_seed(seed_, 0x5eed, e));
    std::vector<std::vector<std::size_t>> batches;
    std::vector<int> queue;
    std::size_t cursor = 0;
    auto refill = [&] {
      std::vector<int> perm = ids_;
      shuffle(perm, rng);
      queue.insert(queue.end(), perm.begin(), perm.end());
    };
    for (int b = 0; b < batches_per_epoch_; ++b) {
      std::vector<int> chosen;
      std::vector<int> deferred;
      while (static_cast<int>(chosen.size()) < p_) {
        if (cursor >= queue.size()) refill();
        const int id = queue[cursor++];
        if (std::find(chosen.begin(), chosen.end(), id) != chosen.end()) {
          deferred.push_back(id);
        } else {
          chosen.push_back(id);
        }
      }
      // Deferred ids go back to the front of the unread queue.
      queue.insert(queue.begin() + static_cast<std::ptrdiff_t>(cursor), deferred.begin(), deferred.end());
      std::vector<std::size_t> batch;
      batch.reserve(static_cast<std::size_t>(p_ * k_));
      for (int id : chosen) draw(id, rng, batch);
      batches.push_back(std::move(batch));
    }
    return batches;
  }

 private:
  void draw(int id, Rng& rng, std::vector<std::size_t>& out) const {
    const auto& pool = pools_.at(id);
    const bool both = !pool[0].empty() && !pool[1].empty();
    const int k_vis = both ? k_ / 2 : (pool[0].empty() ? 0 : k_);
    const int k_ir = k_ - k_vis;
    take(pool[0], k_vis, id, rng, out);
    take(pool[1], k_ir, id, rng, out);
  }

  static void take(const std::vector<std::size_t>& pool, int count, int id, Rng& rng, std::vector<std::size_t>& out) {
    if (count == 0) return;
    if (static_cast<int>(pool.size()) >= count) {
      std::vector<std::size_t> perm = pool;
      shuffle(perm, rng);
      out.insert(out.end(), perm.begin(), perm.begin() + count);
      return;
    }
    log_info("identity ", id, " has ", pool.size(), " samples for K-slot ", count, "; sampling with replacement");
    for (int i = 0; i < count; ++i) out.push_back(pool[uniform_index(rng, pool.size())]);
  }

  std::vector<int> labels_;
  std::vector<bool> is_ir_;
  int p_, k_;
  std::uint64_t seed_;
  std::map<int, std::array<std::vector<std::size_t>, 2>> pools_;
  std::vector<int> ids_;
  int batches_per_epoch_ = 0;
};

// ---------------------------------------------------------------------------
// Synthetic two-modality data.

struct SynthConfig {
  int num_identities = 20;
  int images_per_identity_per_modality = 10;
  int first_identity = 0;
  int height = 72;
  int width = 36;
  std::pair<double, double> luminance_jitter_range{0.7, 1.3};
  // Infrared luminance weights over the rendered RGB scene, and a per-channel
  // multiplicative tint that keeps infrared images slightly off-gray.
  std::array<double, 3> infrared_weights{0.45, 0.40, 0.15};
  std::array<double, 3> infrared_tint{0.06, 0.0, -0.06};
  std::uint64_t seed = 1;

  void validate() const {
    if (num_identities < 2 || images_per_identity_per_modality < 2) {
      fail(ErrorKind::kConfig, "synthetic data needs >= 2 identities and >= 2 images per identity per modality");
    }
    if (height < 12 || width < 6) fail(ErrorKind::kConfig, "synthetic images must be at least 12x6");
    if (!(luminance_jitter_range.first > 0 && luminance_jitter_range.first <= luminance_jitter_range.second)) {
      fail(ErrorKind::kConfig, "luminance jitter range must be positive and ordered");
    }
  }
};

namespace detail {

using Rgb = std::array<double, 3>;

// Appearance of one identity; a function of the identity number only.
struct Appearance {
  Rgb skin, hair, hat, shirt, shirt2, pants, shoes, bag;
  bool has_hat, has_bag, long_hair;
  int pattern;  // 0 solid, 1 horizontal stripes, 2 vertical band, 3 two-tone
  double body_width, head_size;
};

inline Appearance appearance_for(int identity) {
  static const std::vector<Rgb> kCloth = {
      {200, 40, 40},  {40, 160, 60},  {40, 70, 190},  {220, 200, 50}, {150, 60, 170}, {240, 140, 40},
      {30, 30, 30},   {230, 230, 230}, {60, 170, 170}, {120, 80, 40},  {200, 110, 150}, {90, 110, 60}};
  static const std::vector<Rgb> kHair = {{20, 15, 10}, {90, 60, 30}, {200, 170, 90}, {140, 40, 20}, {160, 160, 160}};
  static const std::vector<Rgb> kSkin = {{240, 200, 170}, {200, 150, 110}, {140, 95, 60}};
  Rng rng(derive_seed(0xA9E11D5ULL, identity));
  auto pick = [&](const std::vector<Rgb>& palette) { return palette[uniform_index(rng, palette.size())]; };
  Appearance a;
  a.skin = pick(kSkin);
  a.hair = pick(kHair);
  a.hat = pick(kCloth);
  a.shirt = pick(kCloth);
  a.shirt2 = pick(kCloth);
  a.pants = pick(kCloth);
  a.shoes = pick(kHair);
  a.bag = pick(kCloth);
  a.has_hat = uniform01(rng) < 0.4;
  a.has_bag = uniform01(rng) < 0.4;
  a.long_hair = uniform01(rng) < 0.5;
  a.pattern = static_cast<int>(uniform_index(rng, 4));
  a.body_width = uniform(rng, 0.42, 0.60);
  a.head_size = uniform(rng, 0.85, 1.15);
  return a;
}

// Renders one view as a real-valued RGB canvas.
inline std::vector<Rgb> render_person(const Appearance& a, int h, int w, Rng& rng) {
  std::vector<Rgb> px(static_cast<std::size_t>(h) * w);
  const Rgb bg{uniform(rng, 70, 170), uniform(rng, 70, 170), uniform(rng, 70, 170)};
  for (auto& p : px) p = bg;
  const double dx = uniform(rng, -0.06, 0.06) * w;
  const double dy = uniform(rng, -0.03, 0.03) * h;
  const double sc = uniform(rng, 0.94, 1.06);
  const double cx = w / 2.0 + dx;
  auto fill = [&](double y0, double y1, double x0, double x1, const Rgb& c) {
    for (int y = std::max(0, static_cast<int>(std::floor(y0))); y < std::min(h, static_cast<int>(std::ceil(y1))); ++y)
      for (int x = std::max(0, static_cast<int>(std::floor(x0))); x < std::min(w, static_cast<int>(std::ceil(x1))); ++x)
        px[static_cast<std::size_t>(y) * w + x] = c;
  };
  auto ellipse = [&](double cy, double ex, double ry, double rx, const Rgb& c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double u = (x + 0.5 - ex) / rx, v = (y + 0.5 - cy) / ry;
        if (u * u + v * v <= 1.0) px[static_cast<std::size_t>(y) * w + x] = c;
      }
  };
  const double top = 0.04 * h + dy;
  const double head_r = 0.085 * h * a.head_size * sc;
  const double head_cy = top + head_r * 1.1;
  const double bw = a.body_width * w * sc;
  const double torso_y0 = head_cy + head_r * 1.05, torso_y1 = torso_y0 + 0.32 * h * sc;
  const double leg_y1 = std::min<double>(h, torso_y1 + 0.38 * h * sc);
  // Legs and shoes.
  fill(torso_y1, leg_y1, cx - bw * 0.45, cx - bw * 0.05, a.pants);
  fill(torso_y1, leg_y1, cx + bw * 0.05, cx + bw * 0.45, a.pants);
  fill(leg_y1 - 0.04 * h, leg_y1, cx - bw * 0.5, cx - bw * 0.02, a.shoes);
  fill(leg_y1 - 0.04 * h, leg_y1, cx + bw * 0.02, cx + bw * 0.5, a.shoes);
  // Torso with pattern.
  fill(torso_y0, torso_y1, cx - bw / 2, cx + bw / 2, a.shirt);
  const double th = torso_y1 - torso_y0;
  switch (a.pattern) {
    case 1:
      for (int s = 0; s < 3; ++s) fill(torso_y0 + th * (0.2 + 0.27 * s), torso_y0 + th * (0.32 + 0.27 * s), cx - bw / 2, cx + bw / 2, a.shirt2);
      break;
    case 2: fill(torso_y0, torso_y1, cx - bw * 0.12, cx + bw * 0.12, a.shirt2); break;
    case 3: fill(torso_y0 + th * 0.5, torso_y1, cx - bw / 2, cx + bw / 2, a.shirt2); break;
    default: break;
  }
  // Arms.
  fill(torso_y0 + 0.02 * h, torso_y1 - 0.04 * h, cx - bw / 2 - 0.1 * w, cx - bw / 2, a.shirt);
  fill(torso_y0 + 0.02 * h, torso_y1 - 0.04 * h, cx + bw / 2, cx + bw / 2 + 0.1 * w, a.shirt);
  if (a.has_bag) fill(torso_y0 + th * 0.4, torso_y0 + th * 0.9, cx + bw / 2, cx + bw / 2 + 0.16 * w, a.bag);
  // Head: hair behind, face, hat on top.
  if (a.long_hair) fill(head_cy - head_r * 0.2, head_cy + head_r * 1.5, cx - head_r * 1.05, cx + head_r * 1.05, a.hair);
  ellipse(head_cy, cx, head_r, head_r * 0.85, a.skin);
  fill(head_cy - head_r * 1.05, head_cy - head_r * 0.45, cx - head_r * 0.9, cx + head_r * 0.9, a.hair);
  if (a.has_hat) fill(head_cy - head_r * 1.35, head_cy - head_r * 0.6, cx - head_r * 1.15, cx + head_r * 1.15, a.hat);
  return px;
}

}  // namespace detail

/// Images for one identity in one modality, in file order.
inline std::vector<Image> render_identity(const SynthConfig& cfg, int identity, Modality modality) {
  const detail::Appearance look = detail::appearance_for(identity);
  std::vector<Image> out;
  const bool ir = modality == Modality::kInfrared;
  for (int k = 0; k < cfg.images_per_identity_per_modality; ++k) {
    Rng rng(derive_seed(cfg.seed, identity, ir ? 1 : 0, k));
    // Visible views vary in pose and background per image. Infrared views of
    // one identity share a single scene and differ only by luminance jitter.
    Rng scene_rng(ir ? derive_seed(cfg.seed, identity, 7, 1) : derive_seed(cfg.seed, identity, 7, 0, k));
    auto canvas = detail::render_person(look, cfg.height, cfg.width, scene_rng);
    Image img(cfg.height, cfg.width, modality, identity);
    img.camera = ir ? (k % 2 ? 6 : 3) : std::array<int, 4>{1, 2, 4, 5}[k % 4];
    if (ir) {
      const double jitter = uniform(rng, cfg.luminance_jitter_range.first, cfg.luminance_jitter_range.second);
      for (std::size_t i = 0; i < canvas.size(); ++i) {
        const auto& c = canvas[i];
        const double lum = jitter * (cfg.infrared_weights[0] * c[0] + cfg.infrared_weights[1] * c[1] +
                                     cfg.infrared_weights[2] * c[2]);
        for (int ch = 0; ch < 3; ++ch) img.pixels[i * 3 + ch] = round_to_byte(lum * (1.0 + cfg.infrared_tint[ch]));
      }
    } else {
      const double gain = uniform(rng, 0.9, 1.1);
      for (std::size_t i = 0; i < canvas.size(); ++i)
        for (int ch = 0; ch < 3; ++ch) img.pixels[i * 3 + ch] = round_to_byte(gain * canvas[i][ch]);
    }
    out.push_back(std::move(img));
  }
  return out;
}

/// Renders the whole fixture into `out_dir` (id_dirs layout plus a
/// manifest.csv) and returns its index.
inline DatasetIndex generate_synthetic(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    fail(ErrorKind::kIo, "cannot create output directory '", out_dir.string(), "'");
  }
  DatasetIndex index;
  index.root = out_dir;
  for (int id = cfg.first_identity; id < cfg.first_identity + cfg.num_identities; ++id) {
    for (Modality m : {Modality::kVisible, Modality::kInfrared}) {
      auto images = render_identity(cfg, id, m);
      for (std::size_t k = 0; k < images.size(); ++k) {
        std::ostringstream name;
        name << 'c' << *images[k].camera << '_' << std::setw(4) << std::setfill('0') << k << ".png";
        const fs::path path = out_dir / to_string(m) / std::to_string(id) / name.str();
        write_png(path, images[k]);
        index.records.push_back({path, 0, id, m, *images[k].camera});
      }
    }
  }
  detail::remap_identities(index);
  write_manifest(index, out_dir);
  return index;
}

}  // namespace agm

#endif  // AGM_DATAPIPE_HPP_
