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

// End-to-end orchestration: configuration, learning-rate schedule, AGM
// preprocessing, the two-branch re-identification model, the training loop,
// evaluation, and checkpoint I/O.

#ifndef AGM_HARNESS_HPP_
#define AGM_HARNESS_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "agm/autograd.hpp"
#include "agm/backbone.hpp"
#include "agm/checkpoint.hpp"
#include "agm/common.hpp"
#include "agm/datapipe.hpp"
#include "agm/ganstyle.hpp"
#include "agm/image.hpp"
#include "agm/image_io.hpp"
#include "agm/imaging.hpp"
#include "agm/losses.hpp"
#include "agm/metrics.hpp"
#include "agm/nn.hpp"
#include "json.hpp"

namespace agm {

// ---------------------------------------------------------------------------
// Modes and configuration.

/// Which side of the data is moved into the grayscale space.
enum class AgmMode { kRgbIr, kRgbIrGn, kGrayIr, kAgm };

inline const char* to_string(AgmMode m) {
  switch (m) {
    case AgmMode::kRgbIr: return "rgb-ir";
    case AgmMode::kRgbIrGn: return "rgb-ir-gn";
    case AgmMode::kGrayIr: return "gray-ir";
    case AgmMode::kAgm: return "agm";
  }
  return "?";
}

inline AgmMode parse_agm_mode(std::string_view s) {
  if (s == "rgb-ir") return AgmMode::kRgbIr;
  if (s == "rgb-ir-gn") return AgmMode::kRgbIrGn;
  if (s == "gray-ir") return AgmMode::kGrayIr;
  if (s == "agm" || s == "gray-ir-gn") return AgmMode::kAgm;
  fail(ErrorKind::kConfig, "unknown mode '", s, "' (expected rgb-ir, rgb-ir-gn, gray-ir, agm)");
}

inline bool uses_gn(AgmMode m) { return m == AgmMode::kRgbIrGn || m == AgmMode::kAgm; }

struct TrainConfig {
  std::string profile = "sysu";
  std::string scale = "full";

  // Schedule: linear warm-up lr_start -> lr_peak over [0, warmup_end), then
  // lr_peak until plateau_end, lr_mid until decay_end, lr_final after.
  int total_epochs = 80;
  int warmup_end = 10;
  int plateau_end = 20;
  int decay_end = 50;
  double lr_start = 0.01;
  double lr_peak = 0.1;
  double lr_mid = 0.01;
  double lr_final = 0.001;

  double momentum = 0.9;
  double weight_decay = 5e-4;
  int p_identities = 16;
  int k_samples = 4;
  LossConfig loss;

  // Model.
  int channels = 2048;
  int convs_per_stage = 1;
  int global_h = 288, global_w = 144;
  int hs_h = 128, hs_w = 144;
  double gem_p = 3.0;
  bool gem_per_channel = false;
  double head_init_std = 1e-3;

  // Augmentation.
  int crop_padding = 10;
  double erase_probability = 0.5;

  // Pipeline.
  AgmMode mode = AgmMode::kAgm;
  std::string gan_checkpoint;
  bool use_head_shoulder = true;
  bool joint_losses = true;
  bool freeze_head_shoulder = false;
  bool sequential_updates = false;

  std::uint64_t seed = 1;
  std::string log_path;
  std::string checkpoint_dir;

  int batch_size() const { return p_identities * k_samples; }

  static TrainConfig desk() {
    TrainConfig c;
    c.apply_scale("desk");
    return c;
  }

  void apply_profile(std::string_view p) {
    if (p == "sysu") {
      loss.omega = 1.0;
    } else if (p == "regdb") {
      loss.omega = 0.7;
    } else {
      fail(ErrorKind::kConfig, "unknown profile '", p, "' (expected sysu or regdb)");
    }
    profile = std::string(p);
  }

  /// "full" keeps the reference recipe; "desk" shrinks resolution, width,
  /// batch and epochs for CPU runs on the synthetic fixture.
  void apply_scale(std::string_view s) {
    if (s == "full") {
      TrainConfig d;
      total_epochs = d.total_epochs, warmup_end = d.warmup_end, plateau_end = d.plateau_end, decay_end = d.decay_end;
      channels = d.channels, global_h = d.global_h, global_w = d.global_w, hs_h = d.hs_h, hs_w = d.hs_w;
      p_identities = d.p_identities, k_samples = d.k_samples, crop_padding = d.crop_padding;
    } else if (s == "desk") {
      total_epochs = 20, warmup_end = 3, plateau_end = 5, decay_end = 13;
      channels = 64;
      global_h = 72, global_w = 36, hs_h = 32, hs_w = 36;
      p_identities = 8, k_samples = 4;
      crop_padding = 3;
    } else {
      fail(ErrorKind::kConfig, "unknown scale '", s, "' (expected full or desk)");
    }
    scale = std::string(s);
  }

  void validate() const {
    loss.validate();
    if (total_epochs < 1) fail(ErrorKind::kConfig, "total_epochs must be >= 1");
    if (!(0 < warmup_end && warmup_end <= plateau_end && plateau_end <= decay_end && decay_end <= total_epochs)) {
      fail(ErrorKind::kConfig, "schedule anchors must satisfy 0 < warmup_end <= plateau_end <= decay_end <= total_epochs");
    }
    for (double v : {lr_start, lr_peak, lr_mid, lr_final}) {
      if (!(v > 0)) fail(ErrorKind::kConfig, "learning rates must be positive");
    }
    if (!(momentum >= 0 && momentum < 1)) fail(ErrorKind::kConfig, "momentum must lie in [0,1)");
    if (!(weight_decay >= 0)) fail(ErrorKind::kConfig, "weight_decay must be >= 0");
    if (p_identities < 2 || k_samples < 2) fail(ErrorKind::kConfig, "P and K must both be >= 2");
    if (channels < 1 || convs_per_stage < 1) fail(ErrorKind::kConfig, "channels and convs_per_stage must be >= 1");
    if (global_h < 16 || global_w < 16 || hs_h < 16 || hs_w < 16) {
      fail(ErrorKind::kConfig, "input sizes must be at least 16x16");
    }
    if (gem_p < 1) fail(ErrorKind::kConfig, "gem_p must be >= 1");
    if (crop_padding < 0 || !(erase_probability >= 0 && erase_probability <= 1)) {
      fail(ErrorKind::kConfig, "invalid augmentation settings");
    }
  }

  /// Stable text form; hashed into checkpoints.
  std::string canonical() const {
    std::ostringstream os;
    os << std::setprecision(17);
    for (const auto& [k, v] : to_map()) os << k << '=' << v << '\n';
    return os.str();
  }

  std::map<std::string, std::string> to_map() const {
    auto d = [](double v) {
      std::ostringstream os;
      os << std::setprecision(17) << v;
      return os.str();
    };
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    return {{"profile", profile},
            {"scale", scale},
            {"total_epochs", std::to_string(total_epochs)},
            {"warmup_end", std::to_string(warmup_end)},
            {"plateau_end", std::to_string(plateau_end)},
            {"decay_end", std::to_string(decay_end)},
            {"lr_start", d(lr_start)},
            {"lr_peak", d(lr_peak)},
            {"lr_mid", d(lr_mid)},
            {"lr_final", d(lr_final)},
            {"momentum", d(momentum)},
            {"weight_decay", d(weight_decay)},
            {"p_identities", std::to_string(p_identities)},
            {"k_samples", std::to_string(k_samples)},
            {"xi", d(loss.xi)},
            {"epsilon", d(loss.epsilon)},
            {"omega", d(loss.omega)},
            {"lambda3", d(loss.lambda3)},
            {"lambda4", d(loss.lambda4)},
            {"channels", std::to_string(channels)},
            {"convs_per_stage", std::to_string(convs_per_stage)},
            {"global_h", std::to_string(global_h)},
            {"global_w", std::to_string(global_w)},
            {"hs_h", std::to_string(hs_h)},
            {"hs_w", std::to_string(hs_w)},
            {"gem_p", d(gem_p)},
            {"gem_per_channel", b(gem_per_channel)},
            {"head_init_std", d(head_init_std)},
            {"crop_padding", std::to_string(crop_padding)},
            {"erase_probability", d(erase_probability)},
            {"mode", to_string(mode)},
            {"gan_checkpoint", gan_checkpoint},
            {"use_head_shoulder", b(use_head_shoulder)},
            {"joint_losses", b(joint_losses)},
            {"freeze_head_shoulder", b(freeze_head_shoulder)},
            {"sequential_updates", b(sequential_updates)},
            {"seed", std::to_string(seed)},
            {"log_path", log_path},
            {"checkpoint_dir", checkpoint_dir}};
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, b - a + 1));
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail(ErrorKind::kConfig, "config key '", key, "': '", v, "' is not a number");
  }
}

inline long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail(ErrorKind::kConfig, "config key '", key, "': '", v, "' is not an integer");
  }
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used, 0);
    if (used != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail(ErrorKind::kConfig, "config key '", key, "': '", v, "' is not an unsigned integer");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorKind::kConfig, "config key '", key, "': '", v, "' is not a boolean");
}

}  // namespace detail

/// Parses `key = value` lines; '#' starts a comment. Duplicate keys keep the
/// last value.
inline std::map<std::string, std::string> parse_kv_text(const std::string& text, const std::string& origin = "config") {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail(ErrorKind::kConfig, origin, ":", lineno, ": expected key=value, got '", t, "'");
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    if (key.empty()) fail(ErrorKind::kConfig, origin, ":", lineno, ": empty key");
    out[key] = detail::trim(std::string_view(t).substr(eq + 1));
  }
  return out;
}

inline std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::kConfig, "cannot read config file ", path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_kv_text(ss.str(), path.string());
}

/// Applies overrides; `profile` and `scale` go first so explicit keys win.
inline void apply_overrides(TrainConfig& cfg, const std::map<std::string, std::string>& kv) {
  if (auto it = kv.find("scale"); it != kv.end()) cfg.apply_scale(it->second);
  if (auto it = kv.find("profile"); it != kv.end()) cfg.apply_profile(it->second);
  for (const auto& [k, v] : kv) {
    if (k == "scale" || k == "profile") continue;
    if (k == "total_epochs") cfg.total_epochs = static_cast<int>(detail::to_int(k, v));
    else if (k == "warmup_end") cfg.warmup_end = static_cast<int>(detail::to_int(k, v));
    else if (k == "plateau_end") cfg.plateau_end = static_cast<int>(detail::to_int(k, v));
    else if (k == "decay_end") cfg.decay_end = static_cast<int>(detail::to_int(k, v));
    else if (k == "lr_start") cfg.lr_start = detail::to_double(k, v);
    else if (k == "lr_peak") cfg.lr_peak = detail::to_double(k, v);
    else if (k == "lr_mid") cfg.lr_mid = detail::to_double(k, v);
    else if (k == "lr_final") cfg.lr_final = detail::to_double(k, v);
    else if (k == "momentum") cfg.momentum = detail::to_double(k, v);
    else if (k == "weight_decay") cfg.weight_decay = detail::to_double(k, v);
    else if (k == "p_identities") cfg.p_identities = static_cast<int>(detail::to_int(k, v));
    else if (k == "k_samples") cfg.k_samples = static_cast<int>(detail::to_int(k, v));
    else if (k == "xi") cfg.loss.xi = detail::to_double(k, v);
    else if (k == "epsilon") cfg.loss.epsilon = detail::to_double(k, v);
    else if (k == "omega") cfg.loss.omega = detail::to_double(k, v);
    else if (k == "lambda3") cfg.loss.lambda3 = detail::to_double(k, v);
    else if (k == "lambda4") cfg.loss.lambda4 = detail::to_double(k, v);
    else if (k == "channels") cfg.channels = static_cast<int>(detail::to_int(k, v));
    else if (k == "convs_per_stage") cfg.convs_per_stage = static_cast<int>(detail::to_int(k, v));
    else if (k == "global_h") cfg.global_h = static_cast<int>(detail::to_int(k, v));
    else if (k == "global_w") cfg.global_w = static_cast<int>(detail::to_int(k, v));
    else if (k == "hs_h") cfg.hs_h = static_cast<int>(detail::to_int(k, v));
    else if (k == "hs_w") cfg.hs_w = static_cast<int>(detail::to_int(k, v));
    else if (k == "gem_p") cfg.gem_p = detail::to_double(k, v);
    else if (k == "gem_per_channel") cfg.gem_per_channel = detail::to_bool(k, v);
    else if (k == "head_init_std") cfg.head_init_std = detail::to_double(k, v);
    else if (k == "crop_padding") cfg.crop_padding = static_cast<int>(detail::to_int(k, v));
    else if (k == "erase_probability") cfg.erase_probability = detail::to_double(k, v);
    else if (k == "mode") cfg.mode = parse_agm_mode(v);
    else if (k == "gan_checkpoint") cfg.gan_checkpoint = v;
    else if (k == "use_head_shoulder") cfg.use_head_shoulder = detail::to_bool(k, v);
    else if (k == "joint_losses") cfg.joint_losses = detail::to_bool(k, v);
    else if (k == "freeze_head_shoulder") cfg.freeze_head_shoulder = detail::to_bool(k, v);
    else if (k == "sequential_updates") cfg.sequential_updates = detail::to_bool(k, v);
    else if (k == "seed") cfg.seed = detail::to_u64(k, v);
    else if (k == "log_path") cfg.log_path = v;
    else if (k == "checkpoint_dir") cfg.checkpoint_dir = v;
    else fail(ErrorKind::kConfig, "unknown config key '", k, "'");
  }
}

/// Learning rate for a 0-based epoch.
inline double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.total_epochs) {
    fail(ErrorKind::kConfig, "epoch ", epoch, " outside [0, ", cfg.total_epochs, ")");
  }
  if (epoch < cfg.warmup_end) {
    return cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * static_cast<double>(epoch) / cfg.warmup_end;
  }
  if (epoch < cfg.plateau_end) return cfg.lr_peak;
  if (epoch < cfg.decay_end) return cfg.lr_mid;
  return cfg.lr_final;
}

// ---------------------------------------------------------------------------
// GAN checkpoints.

inline nlohmann::ordered_json gan_arch_json(const GanArchConfig& a) {
  return {{"base_channels", a.base_channels},
          {"residual_blocks", a.residual_blocks},
          {"disc_channels", a.disc_channels},
          {"final_init_std", a.final_init_std}};
}

inline void save_gan(const std::filesystem::path& path, const GanModel& m, const GanConfig& cfg, int epoch) {
  Checkpoint ck;
  std::ostringstream text;
  text << std::setprecision(17) << cfg.lambda1 << ',' << cfg.lambda2 << ',' << cfg.epochs << ',' << cfg.batch_size
       << ',' << cfg.learning_rate << ',' << static_cast<int>(cfg.form) << ',' << gan_arch_json(m.arch).dump();
  ck.header = {{"kind", "gan"},
               {"format_version", kCheckpointVersion},
               {"architecture", gan_arch_json(m.arch)},
               {"seed", cfg.seed},
               {"epoch", epoch},
               {"config_hash", config_hash(text.str())},
               {"lambda1", cfg.lambda1},
               {"lambda2", cfg.lambda2},
               {"loss_form", cfg.form == AdversarialForm::kLog ? "log" : "least_squares"}};
  store_blocks(ck, m.all_params());
  save_checkpoint(path, ck);
}

inline GanModel load_gan(const std::filesystem::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.header.value("kind", "") != "gan") fail(ErrorKind::kConfig, path.string(), " is not a GAN checkpoint");
  const auto& a = ck.header.at("architecture");
  GanArchConfig arch;
  arch.base_channels = a.at("base_channels").get<int>();
  arch.residual_blocks = a.at("residual_blocks").get<int>();
  arch.disc_channels = a.at("disc_channels").get<int>();
  arch.final_init_std = a.at("final_init_std").get<double>();
  GanModel m(arch, ck.header.value("seed", std::uint64_t{1}));
  restore_blocks(ck, m.all_params());
  return m;
}

// ---------------------------------------------------------------------------
// AGM preprocessing.

/// Moves each image into the space the mode asks for: visible images go
/// through to_grayscale in gray-ir/agm, infrared images go through the GAN
/// in the +GN modes. Order and count are preserved.
inline std::vector<Image> preprocess_images(const std::vector<Image>& images, AgmMode mode, const GanModel* gan) {
  const bool any_ir = std::any_of(images.begin(), images.end(),
                                  [](const Image& im) { return im.modality == Modality::kInfrared; });
  if (uses_gn(mode) && any_ir && gan == nullptr) {
    fail(ErrorKind::kConfig, "mode ", to_string(mode), " needs a trained GN checkpoint");
  }
  std::vector<Image> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    if (img.modality == Modality::kVisible && (mode == AgmMode::kGrayIr || mode == AgmMode::kAgm)) {
      out.push_back(to_grayscale(img));
    } else if (img.modality == Modality::kInfrared && uses_gn(mode)) {
      out.push_back(apply_gn(*gan, {img}).front());
    } else {
      out.push_back(img);
    }
  }
  return out;
}

/// Index-level form: loads every record, transforms it, writes the results
/// under `out_dir` (manifest.csv carries the new modality tags) and returns
/// the new index.
inline DatasetIndex preprocess_agm(const DatasetIndex& index, AgmMode mode, const GanModel* gan,
                                   const std::filesystem::path& out_dir) {
  std::vector<Image> imgs;
  imgs.reserve(index.records.size());
  for (std::size_t i = 0; i < index.records.size(); ++i) imgs.push_back(index.load(i));
  const auto outs = preprocess_images(imgs, mode, gan);
  DatasetIndex res;
  res.root = out_dir;
  res.original_ids = index.original_ids;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const Record& r = index.records[i];
    Record nr = r;
    nr.modality = outs[i].modality;
    // Directories keep the source modality so the two sides never collide.
    nr.path = out_dir / to_string(r.modality) / std::to_string(r.original_identity) / r.path.filename();
    write_png(nr.path, outs[i]);
    res.records.push_back(nr);
  }
  write_manifest(res, out_dir);
  return res;
}

/// |mean channel spread of the visible side - mean channel spread of the
/// infrared side|, where the visible side is every image that did not start
/// as infrared (`was_infrared` marks the origin).
inline double modality_gap(const std::vector<Image>& images, const std::vector<bool>& was_infrared) {
  double s[2] = {0, 0};
  int n[2] = {0, 0};
  for (std::size_t i = 0; i < images.size(); ++i) {
    const int side = was_infrared[i] ? 1 : 0;
    s[side] += channel_spread(images[i]);
    ++n[side];
  }
  if (!n[0] || !n[1]) fail(ErrorKind::kData, "modality_gap needs images from both sides");
  return std::abs(s[0] / n[0] - s[1] / n[1]);
}

// ---------------------------------------------------------------------------
// Re-identification model.

struct ModelSpec {
  int num_classes = 0;
  int channels = 128;
  int convs_per_stage = 1;
  int global_h = 288, global_w = 144;
  int hs_h = 128, hs_w = 144;
  double gem_p = 3.0;
  bool gem_per_channel = false;
  bool use_head_shoulder = true;
  double head_init_std = 1e-3;

  static ModelSpec from(const TrainConfig& cfg, int num_classes) {
    return {num_classes,   cfg.channels,        cfg.convs_per_stage,    cfg.global_h,      cfg.global_w, cfg.hs_h,
            cfg.hs_w,      cfg.gem_p,           cfg.gem_per_channel,    cfg.use_head_shoulder, cfg.head_init_std};
  }

  nlohmann::ordered_json to_json() const {
    return {{"num_classes", num_classes}, {"channels", channels},   {"convs_per_stage", convs_per_stage},
            {"global_h", global_h},       {"global_w", global_w},   {"hs_h", hs_h},
            {"hs_w", hs_w},               {"gem_p", gem_p},         {"gem_per_channel", gem_per_channel},
            {"use_head_shoulder", use_head_shoulder}, {"head_init_std", head_init_std}};
  }
  static ModelSpec from_json(const nlohmann::ordered_json& j) {
    ModelSpec s;
    s.num_classes = j.at("num_classes").get<int>();
    s.channels = j.at("channels").get<int>();
    s.convs_per_stage = j.at("convs_per_stage").get<int>();
    s.global_h = j.at("global_h").get<int>();
    s.global_w = j.at("global_w").get<int>();
    s.hs_h = j.at("hs_h").get<int>();
    s.hs_w = j.at("hs_w").get<int>();
    s.gem_p = j.at("gem_p").get<double>();
    s.gem_per_channel = j.at("gem_per_channel").get<bool>();
    s.use_head_shoulder = j.at("use_head_shoulder").get<bool>();
    s.head_init_std = j.at("head_init_std").get<double>();
    return s;
  }
};

/// Embeddings and posteriors of one forward pass.
struct ForwardOut {
  ad::Var vg, vh, vj;  // [N,C], [N,C], [N,2C]; vh/vj null in global-only models
  ad::Var pg, ph, pj;
};

/// Two encoders with independent parameters, GeM per branch, and classifier
/// heads for the global, head-shoulder and joint embeddings. Each component
/// draws its initialization from its own seed stream.
class ReidModel {
 public:
  ReidModel() = default;
  ReidModel(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
    if (spec.num_classes < 2) fail(ErrorKind::kConfig, "need at least 2 identity classes, got ", spec.num_classes);
    const int gem_channels = spec.gem_per_channel ? spec.channels : 1;
    {
      Rng rng(derive_seed(seed, 0xB1, 0));
      BranchConfig bc = BranchConfig::global(spec.channels);
      bc.in_h = spec.global_h, bc.in_w = spec.global_w, bc.convs_per_stage = spec.convs_per_stage;
      global_ = BranchNet(bc, rng);
      Rng hr(derive_seed(seed, 0xB2, 0));
      head_g_ = ClassifierHead(spec.num_classes, spec.channels, hr, spec.head_init_std);
      gem_g_ = GemPooler(spec.gem_p, gem_channels);
    }
    if (spec.use_head_shoulder) {
      Rng rng(derive_seed(seed, 0xB1, 1));
      BranchConfig bc = BranchConfig::head_shoulder(spec.channels);
      bc.in_h = spec.hs_h, bc.in_w = spec.hs_w, bc.convs_per_stage = spec.convs_per_stage;
      hs_ = BranchNet(bc, rng);
      Rng hr(derive_seed(seed, 0xB2, 1));
      head_h_ = ClassifierHead(spec.num_classes, spec.channels, hr, spec.head_init_std);
      Rng jr(derive_seed(seed, 0xB2, 2));
      head_j_ = ClassifierHead(spec.num_classes, 2 * spec.channels, jr, spec.head_init_std);
      gem_h_ = GemPooler(spec.gem_p, gem_channels);
    }
  }

  const ModelSpec& spec() const { return spec_; }

  ForwardOut forward(const ad::Var& xg, const ad::Var& xh, bool training) {
    ForwardOut f{};
    f.vg = gem_g_(global_.forward(xg, training));
    f.pg = ad::softmax(ad::linear(f.vg, head_g_.weight));
    if (spec_.use_head_shoulder) {
      f.vh = gem_h_(hs_.forward(xh, training));
      f.vj = ad::concat_cols(f.vg, f.vh);
      f.ph = ad::softmax(ad::linear(f.vh, head_h_.weight));
      f.pj = ad::softmax(ad::linear(f.vj, head_j_.weight));
    }
    return f;
  }

  void project() {
    gem_g_.project();
    if (spec_.use_head_shoulder) gem_h_.project();
  }

  /// Global-branch parameters (encoder, GeM, head).
  std::vector<nn::NamedParam> global_params() const {
    std::vector<nn::NamedParam> out;
    global_.collect("global", out);
    out.push_back({"global.gem_p", gem_g_.p, false});
    out.push_back({"head_g.weight", head_g_.weight, true});
    return out;
  }
  /// Head-shoulder parameters (encoder, GeM, head) and the joint head.
  std::vector<nn::NamedParam> head_shoulder_params() const {
    std::vector<nn::NamedParam> out;
    if (!spec_.use_head_shoulder) return out;
    hs_.collect("head_shoulder", out);
    out.push_back({"head_shoulder.gem_p", gem_h_.p, false});
    out.push_back({"head_h.weight", head_h_.weight, true});
    return out;
  }
  std::vector<nn::NamedParam> joint_params() const {
    if (!spec_.use_head_shoulder) return {};
    return {{"head_j.weight", head_j_.weight, true}};
  }
  std::vector<nn::NamedParam> params() const {
    auto out = global_params();
    for (auto& p : head_shoulder_params()) out.push_back(p);
    for (auto& p : joint_params()) out.push_back(p);
    return out;
  }
  std::vector<nn::NamedBuffer> buffers() {
    std::vector<nn::NamedBuffer> out;
    global_.buffers("global", out);
    if (spec_.use_head_shoulder) hs_.buffers("head_shoulder", out);
    return out;
  }

 private:
  ModelSpec spec_;
  BranchNet global_, hs_;
  GemPooler gem_g_, gem_h_;
  ClassifierHead head_g_, head_h_, head_j_;
};

/// Global-size image and its head-shoulder derivative (crop, then resize).
inline std::pair<Image, Image> branch_inputs(const Image& img, const ModelSpec& spec) {
  Image g = resize(img, spec.global_h, spec.global_w);
  Image h = resize(crop_head_shoulder(g), spec.hs_h, spec.hs_w);
  return {std::move(g), std::move(h)};
}

/// Tape losses for one batch.
struct StepLosses {
  ad::Var l_id_g, l_id_h, l_id_joint, l_t_g, l_t_h, l_t_joint;
  ObjectiveTerms values;
  TripletMining mining_g, mining_h, mining_j;

  /// Sum of the active terms (null terms skipped).
  ad::Var total() const {
    std::vector<ad::Var> ts;
    for (const auto& v : {l_id_g, l_id_h, l_id_joint, l_t_g, l_t_h, l_t_joint}) {
      if (v) ts.push_back(v);
    }
    return ad::sum(ts);
  }
};

/// Builds every objective term on the tape. Global-only models produce the
/// plain identity and triplet terms of the global branch. Two-branch models
/// add the KL-regularized branch terms, the joint identity + LSR term and
/// the joint triplet term (the latter two only when `joint_losses`).
/// `teacher` replaces the joint posterior as the KL target when given.
inline StepLosses compute_losses(const ForwardOut& f, const std::vector<int>& labels, const LossConfig& lc,
                                 bool joint_losses = true, const Tensor* teacher = nullptr) {
  StepLosses s;
  auto val = [](const ad::Var& v) { return v ? v->scalar() : 0.0; };
  const auto ce_g = lossop::identity_ce(f.pg, labels);
  s.l_t_g = lossop::hard_triplet(f.vg, labels, lc.xi, &s.mining_g);
  if (!f.vh) {
    s.l_id_g = ce_g;
  } else {
    const auto ce_h = lossop::identity_ce(f.ph, labels);
    const ad::Var target = teacher ? ad::constant(*teacher) : f.pj;
    const auto kl_g = lossop::kl_feedback(target, f.pg);
    const auto kl_h = lossop::kl_feedback(target, f.ph);
    s.values.kl_g = kl_g->scalar();
    s.values.kl_h = kl_h->scalar();
    s.l_id_g = lc.lambda3 != 0 ? ad::weighted_sum({ce_g, kl_g}, {1.0, lc.lambda3}) : ce_g;
    s.l_id_h = lc.lambda4 != 0 ? ad::weighted_sum({ce_h, kl_h}, {1.0, lc.lambda4}) : ce_h;
    s.l_t_h = lossop::hard_triplet(f.vh, labels, lc.xi, &s.mining_h);
    if (joint_losses) {
      const auto ce_j = lossop::identity_ce(f.pj, labels);
      if (lc.omega != 0) {
        const auto q = lsr_targets(labels, f.pj->value.dim(1), lc.epsilon);
        s.l_id_joint = ad::weighted_sum({ce_j, lossop::soft_ce(f.pj, q.probs)}, {1.0, lc.omega});
      } else {
        s.l_id_joint = ce_j;
      }
      s.l_t_joint = lossop::hard_triplet(f.vj, labels, lc.xi, &s.mining_j);
    }
  }
  s.values.l_id_g = val(s.l_id_g);
  s.values.l_id_h = val(s.l_id_h);
  s.values.l_id_joint = val(s.l_id_joint);
  s.values.l_t_g = val(s.l_t_g);
  s.values.l_t_h = val(s.l_t_h);
  s.values.l_t_joint = val(s.l_t_joint);
  return s;
}

// ---------------------------------------------------------------------------
// ReID checkpoints.

inline Checkpoint make_reid_checkpoint(ReidModel& model, const TrainConfig& cfg, int epoch,
                                       const nn::Sgd* opt = nullptr) {
  Checkpoint ck;
  ck.header = {{"kind", "reid"},
               {"format_version", kCheckpointVersion},
               {"architecture", model.spec().to_json()},
               {"seed", cfg.seed},
               {"epoch", epoch},
               {"config_hash", config_hash(cfg.canonical())},
               {"mode", to_string(cfg.mode)},
               {"gan_checkpoint", cfg.gan_checkpoint},
               {"config", cfg.to_map()}};
  store_blocks(ck, model.params(), model.buffers());
  if (opt) {
    for (const auto& [name, t] : opt->state()) ck.blocks["optimizer.momentum." + name] = t;
  }
  return ck;
}

inline ReidModel reid_from_checkpoint(const Checkpoint& ck) {
  if (ck.header.value("kind", "") != "reid") fail(ErrorKind::kConfig, "checkpoint is not a re-identification model");
  ReidModel m(ModelSpec::from_json(ck.header.at("architecture")), ck.header.value("seed", std::uint64_t{1}));
  restore_blocks(ck, m.params(), m.buffers());
  return m;
}

// ---------------------------------------------------------------------------
// Training.

struct TrainResult {
  ReidModel model;
  Checkpoint checkpoint;             // final epoch
  std::vector<LossBundle> step_log;  // one per optimizer batch
};

namespace detail {

inline AugmentPolicy augment_policy(const TrainConfig& cfg, std::uint64_t seed) {
  AugmentPolicy p;
  p.crop_padding = cfg.crop_padding;
  p.erase_probability = cfg.erase_probability;
  p.seed = seed;
  return p;
}

/// Batch tensors for both branches; each branch augments independently
/// with its own seed stream.
inline std::pair<ad::Var, ad::Var> batch_tensors(const std::vector<const Image*>& g_imgs,
                                                 const std::vector<const Image*>& h_imgs, const TrainConfig& cfg,
                                                 bool use_hs, int epoch, int step) {
  std::vector<Image> ga, ha;
  for (std::size_t i = 0; i < g_imgs.size(); ++i) {
    ga.push_back(augment(*g_imgs[i], augment_policy(cfg, derive_seed(cfg.seed, 0xA6, 0, epoch, step, i))));
    if (use_hs) ha.push_back(augment(*h_imgs[i], augment_policy(cfg, derive_seed(cfg.seed, 0xA6, 1, epoch, step, i))));
  }
  auto xg = ad::constant(nn::images_to_tensor(ga));
  ad::Var xh = use_hs ? ad::constant(nn::images_to_tensor(ha)) : nullptr;
  return {xg, xh};
}

}  // namespace detail

/// Trains on in-memory (already preprocessed) images whose identities are
/// contiguous in [0, num_classes).
inline TrainResult train_images(const std::vector<Image>& images, int num_classes, const TrainConfig& cfg,
                                const std::vector<bool>* was_infrared = nullptr) {
  cfg.validate();
  if (images.empty()) fail(ErrorKind::kData, "training set is empty");
  for (const auto& img : images) {
    if (img.identity < 0 || img.identity >= num_classes) {
      fail(ErrorKind::kData, "image identity ", img.identity, " outside the classifier range [0, ", num_classes, ")");
    }
  }
  TrainResult res{ReidModel(ModelSpec::from(cfg, num_classes), cfg.seed), {}, {}};
  ReidModel& model = res.model;
  const ModelSpec& spec = model.spec();

  std::vector<Image> g_imgs, h_imgs;
  std::vector<int> labels;
  std::vector<bool> is_ir;
  for (const auto& img : images) {
    auto [g, h] = branch_inputs(img, spec);
    g_imgs.push_back(std::move(g));
    if (spec.use_head_shoulder) h_imgs.push_back(std::move(h));
    labels.push_back(img.identity);
  }
  // The sampler balances the two origins; after AGM both sides are tagged
  // grayscale, so callers pass the pre-processing modality.
  if (was_infrared) {
    if (was_infrared->size() != images.size()) fail(ErrorKind::kShape, "was_infrared size mismatch");
    is_ir = *was_infrared;
  } else {
    for (const auto& img : images) is_ir.push_back(img.modality == Modality::kInfrared);
  }
  int p = cfg.p_identities;
  std::set<int> distinct(labels.begin(), labels.end());
  if (static_cast<int>(distinct.size()) < p) {
    log_warn("P=", p, " exceeds the ", distinct.size(), " identities in the training set; using P=", distinct.size());
    p = static_cast<int>(distinct.size());
  }
  PkSampler sampler(labels, is_ir, p, cfg.k_samples, derive_seed(cfg.seed, 0x5A));

  std::vector<nn::NamedParam> trainable = model.global_params();
  if (!cfg.freeze_head_shoulder) {
    for (auto& q : model.head_shoulder_params()) trainable.push_back(q);
  }
  for (auto& q : model.joint_params()) trainable.push_back(q);
  const auto all = model.params();
  nn::Sgd opt(cfg.momentum, cfg.weight_decay);

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    const std::filesystem::path lp(cfg.log_path);
    if (lp.has_parent_path()) std::filesystem::create_directories(lp.parent_path());
    log.open(lp);
    if (!log) fail(ErrorKind::kIo, "cannot write training log ", cfg.log_path);
  }

  long step = 0;
  for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    const auto batches = sampler.epoch(epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<const Image*> gb, hb;
      std::vector<int> yb;
      for (std::size_t idx : batches[b]) {
        gb.push_back(&g_imgs[idx]);
        if (spec.use_head_shoulder) hb.push_back(&h_imgs[idx]);
        yb.push_back(labels[idx]);
      }
      auto [xg, xh] = detail::batch_tensors(gb, hb, cfg, spec.use_head_shoulder, epoch, static_cast<int>(b));

      auto run = [&](int group) {
        nn::zero_grads(all);
        auto f = model.forward(xg, xh, true);
        auto s = compute_losses(f, yb, cfg.loss, cfg.joint_losses);
        ad::Var target;
        if (group < 0) {
          target = s.total();
        } else {
          const ad::Var pick[3][2] = {{s.l_id_g, s.l_t_g}, {s.l_id_h, s.l_t_h}, {s.l_id_joint, s.l_t_joint}};
          std::vector<ad::Var> ts;
          for (const auto& v : pick[group]) if (v) ts.push_back(v);
          if (ts.empty()) return s;
          target = ad::sum(ts);
        }
        ad::backward(target);
        opt.step(trainable, lr);
        model.project();
        return s;
      };

      StepLosses s;
      if (cfg.sequential_updates) {
        s = run(0);
        run(1);
        run(2);
      } else {
        s = run(-1);
      }
      LossBundle bundle = total_loss(s.values);
      if (log.is_open()) {
        nlohmann::ordered_json j{{"step", step}, {"epoch", epoch}};
        j.update(bundle.to_json());
        log << j.dump() << '\n';
      }
      res.step_log.push_back(std::move(bundle));
      ++step;
    }
    log_info("epoch ", epoch + 1, "/", cfg.total_epochs, " lr=", lr, " total=", res.step_log.back().total);
    if (!cfg.checkpoint_dir.empty()) {
      std::ostringstream name;
      name << "epoch_" << std::setw(3) << std::setfill('0') << epoch + 1 << ".ckpt";
      save_checkpoint(std::filesystem::path(cfg.checkpoint_dir) / name.str(),
                      make_reid_checkpoint(model, cfg, epoch + 1, &opt));
    }
  }
  res.checkpoint = make_reid_checkpoint(model, cfg, cfg.total_epochs, &opt);
  return res;
}

inline std::vector<Image> load_all(const DatasetIndex& index) {
  std::vector<Image> out;
  out.reserve(index.records.size());
  for (std::size_t i = 0; i < index.records.size(); ++i) out.push_back(index.load(i));
  return out;
}

/// Loads the index, applies the configured AGM mode and trains.
inline TrainResult train(const DatasetIndex& index, const TrainConfig& cfg) {
  cfg.validate();
  std::optional<GanModel> gan;
  if (uses_gn(cfg.mode)) {
    if (cfg.gan_checkpoint.empty()) fail(ErrorKind::kConfig, "mode ", to_string(cfg.mode), " needs gan_checkpoint");
    gan = load_gan(cfg.gan_checkpoint);
  }
  std::vector<bool> was_ir;
  for (const auto& r : index.records) was_ir.push_back(r.modality == Modality::kInfrared);
  return train_images(preprocess_images(load_all(index), cfg.mode, gan ? &*gan : nullptr), index.num_classes(), cfg,
                      &was_ir);
}

// ---------------------------------------------------------------------------
// Evaluation.

/// Eval-mode embeddings: joint for two-branch models, global otherwise.
inline EmbeddingBatch embed(ReidModel& model, const std::vector<Image>& images, std::size_t chunk = 64) {
  if (images.empty()) fail(ErrorKind::kData, "no images to embed");
  const ModelSpec& spec = model.spec();
  EmbeddingBatch out;
  out.tag = spec.use_head_shoulder ? BranchTag::kJoint : BranchTag::kGlobal;
  out.vectors.resize(static_cast<Eigen::Index>(images.size()), spec.use_head_shoulder ? 2 * spec.channels : spec.channels);
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t end = std::min(images.size(), start + chunk);
    std::vector<Image> g, h;
    for (std::size_t i = start; i < end; ++i) {
      auto [gi, hi] = branch_inputs(images[i], spec);
      g.push_back(std::move(gi));
      h.push_back(std::move(hi));
      out.labels.push_back(images[i].identity);
    }
    auto xg = ad::constant(nn::images_to_tensor(g));
    auto xh = spec.use_head_shoulder ? ad::constant(nn::images_to_tensor(h)) : nullptr;
    auto f = model.forward(xg, xh, false);
    const auto v = (spec.use_head_shoulder ? f.vj : f.vg)->value.as_matrix();
    out.vectors.middleRows(static_cast<Eigen::Index>(start), v.rows()) = v;
  }
  return out;
}

inline MetricsSummary evaluate(ReidModel& model, const std::vector<Image>& query, const std::vector<Image>& gallery,
                               const std::optional<ExclusionMask>& exclusion = std::nullopt) {
  return summarize(rank(embed(model, query), embed(model, gallery), exclusion));
}

}  // namespace agm

#endif  // AGM_HARNESS_HPP_
