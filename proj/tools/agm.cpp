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

// agm command-line tool.
//
//   agm synth-data --out DIR [--ids N] [--per-id K] [--seed S]
//   agm gray       --in-dir DIR --out-dir DIR
//   agm gan-train  --gray-dir DIR --ir-dir DIR --out CKPT [--epochs E] [--seed S]
//   agm gan-apply  --ckpt CKPT --in-dir DIR --out-dir DIR
//   agm train      --data DIR --out CKPT [--mode M] [--gan-ckpt CKPT] [--log FILE]
//   agm eval       --ckpt CKPT --query-dir DIR --gallery-dir DIR --out metrics.json
//
// Every subcommand takes --config FILE (flat key=value). Seed precedence:
// --seed, then AGM_SEED, then the config file. Exit codes: 0 success,
// 2 configuration error, 3 data error, 4 numeric failure.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "agm/checkpoint.hpp"
#include "agm/common.hpp"
#include "agm/datapipe.hpp"
#include "agm/ganstyle.hpp"
#include "agm/harness.hpp"
#include "agm/image_io.hpp"
#include "agm/imaging.hpp"

namespace fs = std::filesystem;
using agm::ErrorKind;
using agm::fail;

namespace {

using Kv = std::map<std::string, std::string>;

Kv load_config(const std::string& path) { return path.empty() ? Kv{} : agm::read_kv_file(path); }

/// Pops a key from the config map; unknown leftovers are rejected later.
template <typename T>
void take(Kv& kv, const std::string& key, T& out) {
  auto it = kv.find(key);
  if (it == kv.end()) return;
  if constexpr (std::is_same_v<T, std::string>) {
    out = it->second;
  } else if constexpr (std::is_same_v<T, bool>) {
    out = agm::detail::to_bool(key, it->second);
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    out = agm::detail::to_u64(key, it->second);
  } else if constexpr (std::is_integral_v<T>) {
    out = static_cast<T>(agm::detail::to_int(key, it->second));
  } else {
    out = agm::detail::to_double(key, it->second);
  }
  kv.erase(it);
}

void reject_unknown(const Kv& kv, const char* command) {
  if (!kv.empty()) fail(ErrorKind::kConfig, "unknown config key '", kv.begin()->first, "' for ", command);
}

/// --seed, then AGM_SEED, then whatever the config set.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_value) {
  if (flag) return *flag;
  if (const char* env = std::getenv("AGM_SEED"); env && *env) return agm::detail::to_u64("AGM_SEED", env);
  return config_value;
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::kData, "'", dir.string(), "' is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) fail(ErrorKind::kData, "no PNG images under '", dir.string(), "'");
  return out;
}

std::vector<agm::Image> read_all(const std::vector<fs::path>& paths, agm::Modality m) {
  std::vector<agm::Image> out;
  out.reserve(paths.size());
  for (const auto& p : paths) out.push_back(agm::read_png(p, m));
  return out;
}

/// Images of one modality from a dataset directory, labelled by their
/// on-disk identity so query and gallery share a label space.
std::vector<agm::Image> load_side(const fs::path& root, agm::Modality m) {
  const auto index = agm::load_dataset(root, agm::Layout::kAuto, false);
  std::vector<agm::Image> out;
  for (std::size_t i = 0; i < index.records.size(); ++i) {
    if (index.records[i].modality != m) continue;
    agm::Image img = index.load(i);
    img.identity = index.records[i].original_identity;
    out.push_back(std::move(img));
  }
  if (out.empty()) fail(ErrorKind::kData, "no ", agm::to_string(m), " images in '", root.string(), "'");
  return out;
}

int cmd_synth(const std::string& config, int ids, int per_id, const std::string& out,
              std::optional<std::uint64_t> seed) {
  Kv kv = load_config(config);
  agm::SynthConfig cfg;
  take(kv, "ids", cfg.num_identities);
  take(kv, "per_id", cfg.images_per_identity_per_modality);
  take(kv, "first_identity", cfg.first_identity);
  take(kv, "height", cfg.height);
  take(kv, "width", cfg.width);
  take(kv, "jitter_lo", cfg.luminance_jitter_range.first);
  take(kv, "jitter_hi", cfg.luminance_jitter_range.second);
  take(kv, "seed", cfg.seed);
  reject_unknown(kv, "synth-data");
  if (ids > 0) cfg.num_identities = ids;
  if (per_id > 0) cfg.images_per_identity_per_modality = per_id;
  cfg.seed = resolve_seed(seed, cfg.seed);
  const auto index = agm::generate_synthetic(cfg, out);
  std::cout << "wrote " << index.records.size() << " images (" << index.num_classes() << " identities) to " << out
            << '\n';
  return 0;
}

int cmd_gray(const std::string& config, const fs::path& in, const fs::path& out) {
  Kv kv = load_config(config);
  agm::GrayscaleCoeffs coeffs;
  take(kv, "alpha1", coeffs.alpha1);
  take(kv, "alpha2", coeffs.alpha2);
  take(kv, "alpha3", coeffs.alpha3);
  reject_unknown(kv, "gray");
  coeffs.validate();
  const auto paths = list_pngs(in);
  for (const auto& p : paths) {
    agm::write_png(out / fs::relative(p, in), agm::to_grayscale(agm::read_png(p, agm::Modality::kVisible), coeffs));
  }
  std::cout << "converted " << paths.size() << " images\n";
  return 0;
}

agm::GanConfig gan_config(Kv& kv) {
  agm::GanConfig cfg;
  take(kv, "lambda1", cfg.lambda1);
  take(kv, "lambda2", cfg.lambda2);
  take(kv, "epochs", cfg.epochs);
  take(kv, "batch_size", cfg.batch_size);
  take(kv, "learning_rate", cfg.learning_rate);
  take(kv, "beta1", cfg.beta1);
  take(kv, "beta2", cfg.beta2);
  take(kv, "base_channels", cfg.arch.base_channels);
  take(kv, "residual_blocks", cfg.arch.residual_blocks);
  take(kv, "disc_channels", cfg.arch.disc_channels);
  take(kv, "final_init_std", cfg.arch.final_init_std);
  take(kv, "seed", cfg.seed);
  std::string form = "log";
  take(kv, "loss_form", form);
  if (form == "log") {
    cfg.form = agm::AdversarialForm::kLog;
  } else if (form == "least_squares") {
    cfg.form = agm::AdversarialForm::kLeastSquares;
  } else {
    fail(ErrorKind::kConfig, "loss_form must be log or least_squares, got '", form, "'");
  }
  return cfg;
}

int cmd_gan_train(const std::string& config, const fs::path& gray_dir, const fs::path& ir_dir, const fs::path& out,
                  int epochs, std::optional<std::uint64_t> seed) {
  Kv kv = load_config(config);
  agm::GanConfig cfg = gan_config(kv);
  reject_unknown(kv, "gan-train");
  if (epochs > 0) cfg.epochs = epochs;
  cfg.seed = resolve_seed(seed, cfg.seed);
  auto gray = read_all(list_pngs(gray_dir), agm::Modality::kGrayscale);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    if (!gray[i].channels_equal()) fail(ErrorKind::kData, "image ", i, " under ", gray_dir.string(), " is not grayscale");
  }
  auto ir = read_all(list_pngs(ir_dir), agm::Modality::kInfrared);
  auto result = agm::train_gn(gray, ir, cfg);
  agm::save_gan(out, result.model, cfg, cfg.epochs);
  for (std::size_t e = 0; e < result.history.size(); ++e) {
    nlohmann::ordered_json j{{"epoch", e + 1}};
    j.update(result.history[e].to_json());
    std::cout << j.dump() << '\n';
  }
  return 0;
}

int cmd_gan_apply(const std::string& config, const fs::path& ckpt, const fs::path& in, const fs::path& out) {
  Kv kv = load_config(config);
  bool collapse = true;
  take(kv, "collapse_channels", collapse);
  reject_unknown(kv, "gan-apply");
  const auto model = agm::load_gan(ckpt);
  const auto paths = list_pngs(in);
  for (const auto& p : paths) {
    auto img = agm::read_png(p, agm::Modality::kInfrared);
    agm::write_png(out / fs::relative(p, in), agm::apply_gn(model, {img}, collapse).front());
  }
  std::cout << "translated " << paths.size() << " images\n";
  return 0;
}

int cmd_train(const std::string& config, const fs::path& data, const fs::path& out, const std::string& mode,
              const std::string& gan_ckpt, const std::string& log_path, int epochs,
              std::optional<std::uint64_t> seed) {
  agm::TrainConfig cfg;
  agm::apply_overrides(cfg, load_config(config));
  if (!mode.empty()) cfg.mode = agm::parse_agm_mode(mode);
  if (!gan_ckpt.empty()) cfg.gan_checkpoint = gan_ckpt;
  if (!log_path.empty()) cfg.log_path = log_path;
  if (epochs > 0) {
    // Rescale the schedule anchors proportionally to the new length.
    const double f = static_cast<double>(epochs) / cfg.total_epochs;
    cfg.warmup_end = std::max(1, static_cast<int>(std::lround(cfg.warmup_end * f)));
    cfg.plateau_end = std::max(cfg.warmup_end, static_cast<int>(std::lround(cfg.plateau_end * f)));
    cfg.decay_end = std::max(cfg.plateau_end, static_cast<int>(std::lround(cfg.decay_end * f)));
    cfg.total_epochs = epochs;
    cfg.decay_end = std::min(cfg.decay_end, epochs);
    cfg.plateau_end = std::min(cfg.plateau_end, cfg.decay_end);
    cfg.warmup_end = std::min(cfg.warmup_end, cfg.plateau_end);
  }
  cfg.seed = resolve_seed(seed, cfg.seed);
  const auto index = agm::load_dataset(data);
  auto result = agm::train(index, cfg);
  agm::save_checkpoint(out, result.checkpoint);
  std::cout << "trained " << cfg.total_epochs << " epochs, final total loss " << result.step_log.back().total << '\n';
  return 0;
}

int cmd_eval(const std::string& config, const fs::path& ckpt_path, const fs::path& query_dir,
             const fs::path& gallery_dir, const fs::path& out, const std::string& gan_ckpt) {
  Kv kv = load_config(config);
  std::string qm = "infrared", gm = "visible", gan_path = gan_ckpt, embeddings;
  bool exclude_same_camera = false;
  take(kv, "query_modality", qm);
  take(kv, "gallery_modality", gm);
  take(kv, "exclude_same_camera", exclude_same_camera);
  take(kv, "embeddings_out", embeddings);
  if (gan_path.empty()) take(kv, "gan_checkpoint", gan_path);
  kv.erase("gan_checkpoint");
  reject_unknown(kv, "eval");

  const auto ckpt = agm::load_checkpoint(ckpt_path);
  auto model = agm::reid_from_checkpoint(ckpt);
  const auto mode = agm::parse_agm_mode(ckpt.header.value("mode", std::string("rgb-ir")));
  if (gan_path.empty()) gan_path = ckpt.header.value("gan_checkpoint", std::string());
  std::optional<agm::GanModel> gan;
  if (agm::uses_gn(mode)) {
    if (gan_path.empty()) fail(ErrorKind::kConfig, "checkpoint was trained in mode ", agm::to_string(mode), "; pass --gan-ckpt");
    gan = agm::load_gan(gan_path);
  }
  auto query = load_side(query_dir, agm::parse_modality(qm));
  auto gallery = load_side(gallery_dir, agm::parse_modality(gm));
  std::optional<agm::ExclusionMask> mask;
  if (exclude_same_camera) {
    mask = agm::ExclusionMask(static_cast<int>(query.size()), static_cast<int>(gallery.size()));
    for (std::size_t q = 0; q < query.size(); ++q)
      for (std::size_t g = 0; g < gallery.size(); ++g)
        if (query[q].camera && query[q].camera == gallery[g].camera) mask->set(static_cast<int>(q), static_cast<int>(g));
  }
  query = agm::preprocess_images(query, mode, gan ? &*gan : nullptr);
  gallery = agm::preprocess_images(gallery, mode, gan ? &*gan : nullptr);
  const auto qe = agm::embed(model, query);
  const auto ge = agm::embed(model, gallery);
  if (!embeddings.empty()) {
    agm::save_embeddings(embeddings + ".query.emb", qe, {{"role", "query"}});
    agm::save_embeddings(embeddings + ".gallery.emb", ge, {{"role", "gallery"}});
  }
  const auto summary = agm::summarize(agm::rank(qe, ge, mask));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream os(out);
  if (!os) fail(ErrorKind::kIo, "cannot write ", out.string());
  os << summary.to_json().dump(2) << '\n';
  std::cout << summary.to_json().dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aligned grayscale modality re-identification toolkit"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Progress logging on stderr");

  std::string config;
  std::optional<std::uint64_t> seed;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "Flat key=value config file");
  };

  auto* synth = app.add_subcommand("synth-data", "Render the synthetic two-modality dataset");
  int ids = 0, per_id = 0;
  std::string out;
  add_common(synth);
  synth->add_option("--ids", ids, "Number of identities");
  synth->add_option("--per-id", per_id, "Images per identity per modality");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--seed", seed, "Random seed");

  auto* gray = app.add_subcommand("gray", "Convert visible images to grayscale");
  std::string in_dir, out_dir;
  add_common(gray);
  gray->add_option("--in-dir", in_dir, "Input directory")->required();
  gray->add_option("--out-dir", out_dir, "Output directory")->required();

  auto* gan_train = app.add_subcommand("gan-train", "Train the infrared/grayscale translation model");
  std::string gray_dir, ir_dir;
  int epochs = 0;
  add_common(gan_train);
  gan_train->add_option("--gray-dir", gray_dir, "Grayscale images")->required();
  gan_train->add_option("--ir-dir", ir_dir, "Infrared images")->required();
  gan_train->add_option("--out", out, "Checkpoint path")->required();
  gan_train->add_option("--epochs", epochs, "Epochs");
  gan_train->add_option("--seed", seed, "Random seed");

  auto* gan_apply = app.add_subcommand("gan-apply", "Translate infrared images into the grayscale domain");
  std::string ckpt;
  add_common(gan_apply);
  gan_apply->add_option("--ckpt", ckpt, "GAN checkpoint")->required();
  gan_apply->add_option("--in-dir", in_dir, "Infrared images")->required();
  gan_apply->add_option("--out-dir", out_dir, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train the two-branch re-identification model");
  std::string data, mode, gan_ckpt, log_path;
  add_common(train);
  train->add_option("--data", data, "Training dataset root")->required();
  train->add_option("--out", out, "Final checkpoint path")->required();
  train->add_option("--mode", mode, "rgb-ir, rgb-ir-gn, gray-ir or agm");
  train->add_option("--gan-ckpt", gan_ckpt, "GAN checkpoint for the +GN modes");
  train->add_option("--log", log_path, "JSON-lines training log");
  train->add_option("--epochs", epochs, "Epochs (schedule anchors rescale)");
  train->add_option("--seed", seed, "Random seed");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on query/gallery sets");
  std::string query_dir, gallery_dir;
  add_common(eval);
  eval->add_option("--ckpt", ckpt, "Re-identification checkpoint")->required();
  eval->add_option("--query-dir", query_dir, "Query dataset root")->required();
  eval->add_option("--gallery-dir", gallery_dir, "Gallery dataset root")->required();
  eval->add_option("--out", out, "Metrics JSON path")->required();
  eval->add_option("--gan-ckpt", gan_ckpt, "Override the GAN checkpoint recorded in the model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  agm::verbose_flag() = verbose;

  try {
    if (*synth) return cmd_synth(config, ids, per_id, out, seed);
    if (*gray) return cmd_gray(config, in_dir, out_dir);
    if (*gan_train) return cmd_gan_train(config, gray_dir, ir_dir, out, epochs, seed);
    if (*gan_apply) return cmd_gan_apply(config, ckpt, in_dir, out_dir);
    if (*train) return cmd_train(config, data, out, mode, gan_ckpt, log_path, epochs, seed);
    if (*eval) return cmd_eval(config, ckpt, query_dir, gallery_dir, out, gan_ckpt);
  } catch (const agm::Error& e) {
    std::cerr << "agm: " << agm::to_string(e.kind()) << " error: " << e.what() << '\n';
    return agm::exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "agm: data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "agm: error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
