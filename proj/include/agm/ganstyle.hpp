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

// Grayscale normalization: unpaired translation between the grayscale domain
// (A) and the infrared domain (B) with two generators and two patch
// discriminators, trained with adversarial, cycle and identity-mapping
// losses. Only the infrared -> grayscale generator is used downstream.

#ifndef AGM_GANSTYLE_HPP_
#define AGM_GANSTYLE_HPP_

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "agm/autograd.hpp"
#include "agm/common.hpp"
#include "agm/image.hpp"
#include "agm/losses.hpp"
#include "agm/nn.hpp"

namespace agm {

enum class AdversarialForm { kLog, kLeastSquares };

struct GanArchConfig {
  int base_channels = 8;
  int residual_blocks = 3;
  int disc_channels = 8;
  // Std-dev of the generators' output conv; 0 makes both generators exact
  // identity maps at initialization.
  double final_init_std = 0.02;
};

struct GanConfig {
  double lambda1 = 10.0;  // cycle weight
  double lambda2 = 5.0;   // identity-mapping weight
  int epochs = 5;
  int batch_size = 4;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  AdversarialForm form = AdversarialForm::kLog;
  GanArchConfig arch;
  std::uint64_t seed = 1;

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0) fail(ErrorKind::kConfig, "GAN lambda1/lambda2 must be >= 0");
    if (epochs < 1 || batch_size < 1) fail(ErrorKind::kConfig, "GAN epochs and batch_size must be >= 1");
    if (!(learning_rate > 0)) fail(ErrorKind::kConfig, "GAN learning rate must be > 0");
    if (arch.base_channels < 1 || arch.disc_channels < 1 || arch.residual_blocks < 0) {
      fail(ErrorKind::kConfig, "GAN architecture sizes must be positive");
    }
  }
};

/// Residual encoder-decoder: stem, 3 stride-2 downsampling convs, k residual
/// blocks, 3 nearest-upsample + conv stages back to the input size, and an
/// output conv added to the input (clamped to [-1, 1]).
class Generator {
 public:
  Generator() = default;
  Generator(const GanArchConfig& arch, Rng& rng) {
    const int c = arch.base_channels;
    stem_ = nn::Conv2d(3, c, 3, 1, 1, true, rng);
    down_ = {nn::Conv2d(c, 2 * c, 3, 2, 1, true, rng), nn::Conv2d(2 * c, 4 * c, 3, 2, 1, true, rng),
             nn::Conv2d(4 * c, 4 * c, 3, 2, 1, true, rng)};
    for (int i = 0; i < arch.residual_blocks; ++i) {
      res_.push_back({nn::Conv2d(4 * c, 4 * c, 3, 1, 1, true, rng), nn::Conv2d(4 * c, 4 * c, 3, 1, 1, true, rng)});
    }
    up_ = {nn::Conv2d(4 * c, 4 * c, 3, 1, 1, true, rng), nn::Conv2d(4 * c, 2 * c, 3, 1, 1, true, rng),
           nn::Conv2d(2 * c, c, 3, 1, 1, true, rng)};
    out_ = nn::Conv2d(c, 3, 3, 1, 1, true, rng);
    out_.weight->value = nn::normal_tensor(out_.weight->value.shape, arch.final_init_std, rng);
  }

  ad::Var operator()(const ad::Var& x) const {
    std::vector<std::pair<int, int>> sizes{{x->value.dim(2), x->value.dim(3)}};
    ad::Var h = ad::relu(stem_(x));
    for (const auto& d : down_) {
      sizes.emplace_back(h->value.dim(2), h->value.dim(3));
      h = ad::relu(d(h));
    }
    for (const auto& [a, b] : res_) h = ad::add(h, b(ad::relu(a(h))));
    for (std::size_t i = 0; i < up_.size(); ++i) {
      const auto [th, tw] = sizes[sizes.size() - 1 - i];
      h = ad::relu(up_[i](ad::upsample_nearest(h, th, tw)));
    }
    return ad::clamp(ad::add(x, out_(h)), -1.0, 1.0);
  }

  void collect(const std::string& prefix, std::vector<nn::NamedParam>& out) const {
    stem_.collect(prefix + ".stem", out);
    for (std::size_t i = 0; i < down_.size(); ++i) down_[i].collect(prefix + ".down" + std::to_string(i), out);
    for (std::size_t i = 0; i < res_.size(); ++i) {
      res_[i].first.collect(prefix + ".res" + std::to_string(i) + "a", out);
      res_[i].second.collect(prefix + ".res" + std::to_string(i) + "b", out);
    }
    for (std::size_t i = 0; i < up_.size(); ++i) up_[i].collect(prefix + ".up" + std::to_string(i), out);
    out_.collect(prefix + ".out", out);
  }

  nn::Conv2d& output_conv() { return out_; }

 private:
  nn::Conv2d stem_;
  std::vector<nn::Conv2d> down_;
  std::vector<std::pair<nn::Conv2d, nn::Conv2d>> res_;
  std::vector<nn::Conv2d> up_;
  nn::Conv2d out_;
};

/// Patch discriminator: three stride-2 convs with leaky ReLU, then a 1-channel
/// conv squashed to (0,1) per patch.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const GanArchConfig& arch, Rng& rng) {
    const int d = arch.disc_channels;
    const double leaky_gain = std::sqrt(2.0 / (1.0 + 0.2 * 0.2));
    convs_ = {nn::Conv2d(3, d, 3, 2, 1, true, rng, leaky_gain), nn::Conv2d(d, 2 * d, 3, 2, 1, true, rng, leaky_gain),
              nn::Conv2d(2 * d, 4 * d, 3, 2, 1, true, rng, leaky_gain)};
    head_ = nn::Conv2d(4 * d, 1, 3, 1, 1, true, rng, 1.0);
  }

  ad::Var operator()(const ad::Var& x) const {
    ad::Var h = x;
    for (const auto& c : convs_) h = ad::leaky_relu(c(h), 0.2);
    return ad::sigmoid(head_(h));
  }

  void collect(const std::string& prefix, std::vector<nn::NamedParam>& out) const {
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(prefix + ".conv" + std::to_string(i), out);
    head_.collect(prefix + ".head", out);
  }

  nn::Conv2d& head() { return head_; }

 private:
  std::vector<nn::Conv2d> convs_;
  nn::Conv2d head_;
};

/// G: grayscale -> infrared, F: infrared -> grayscale, D_A scores the
/// grayscale domain, D_B the infrared domain.
struct GanModel {
  GanArchConfig arch;
  Generator gen_g;
  Generator gen_f;
  Discriminator disc_a;
  Discriminator disc_b;

  GanModel() = default;
  GanModel(const GanArchConfig& a, std::uint64_t seed) : arch(a) {
    Rng rng(derive_seed(seed, 0x6a4));
    gen_g = Generator(arch, rng);
    gen_f = Generator(arch, rng);
    disc_a = Discriminator(arch, rng);
    disc_b = Discriminator(arch, rng);
  }

  std::vector<nn::NamedParam> generator_params() const {
    std::vector<nn::NamedParam> out;
    gen_g.collect("G", out);
    gen_f.collect("F", out);
    return out;
  }
  std::vector<nn::NamedParam> discriminator_params() const {
    std::vector<nn::NamedParam> out;
    disc_a.collect("DA", out);
    disc_b.collect("DB", out);
    return out;
  }
  std::vector<nn::NamedParam> all_params() const {
    auto out = generator_params();
    auto d = discriminator_params();
    out.insert(out.end(), d.begin(), d.end());
    return out;
  }
};

struct AdversarialTerms {
  double loss_g_to_t = 0;  // generator side, G against D_B
  double loss_t_to_g = 0;  // generator side, F against D_A
  double disc_a = 0;       // D_A on real grayscale vs F(x_t)
  double disc_b = 0;       // D_B on real infrared vs G(x_g)
};

namespace gan {

// Tape-level pieces shared by the loss functions and the training loop.

inline ad::Var generator_adv(const ad::Var& fake_scores, AdversarialForm form) {
  return form == AdversarialForm::kLog ? ad::mean_neg_log(fake_scores, false) : ad::mean_sq_to(fake_scores, 1.0);
}

inline ad::Var discriminator_adv(const ad::Var& real_scores, const ad::Var& fake_scores, AdversarialForm form) {
  if (form == AdversarialForm::kLog) {
    return ad::sum({ad::mean_neg_log(real_scores, false), ad::mean_neg_log(fake_scores, true)});
  }
  return ad::sum({ad::mean_sq_to(real_scores, 1.0), ad::mean_sq_to(fake_scores, 0.0)});
}

inline ad::Var to_var(const std::vector<Image>& batch, Modality expected, const char* what) {
  if (batch.empty()) fail(ErrorKind::kData, what, ": empty batch");
  for (const auto& img : batch) {
    if (img.modality != expected) {
      fail(ErrorKind::kModality, what, ": expected ", to_string(expected), " images, got ", to_string(img.modality));
    }
  }
  return ad::constant(nn::images_to_tensor(batch));
}

/// One forward of both generators and every translated image the losses
/// need.
struct Forward {
  ad::Var xg, xt;
  ad::Var fake_t, fake_g;      // G(x_g), F(x_t)
  ad::Var cyc_g, cyc_t;        // F(G(x_g)), G(F(x_t))
  ad::Var idt_t, idt_g;        // G(x_t), F(x_g)
};

inline Forward run(const GanModel& m, const ad::Var& xg, const ad::Var& xt, bool with_identity) {
  Forward f{xg, xt, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr};
  f.fake_t = m.gen_g(xg);
  f.fake_g = m.gen_f(xt);
  f.cyc_g = m.gen_f(f.fake_t);
  f.cyc_t = m.gen_g(f.fake_g);
  if (with_identity) {
    f.idt_t = m.gen_g(xt);
    f.idt_g = m.gen_f(xg);
  }
  return f;
}

}  // namespace gan

/// Generator-side and discriminator-side adversarial terms, mean-reduced
/// over batch and patches. Scores are clamped to [1e-7, 1 - 1e-7] in the
/// log form.
inline AdversarialTerms adversarial_losses(const GanModel& m, const std::vector<Image>& batch_g,
                                           const std::vector<Image>& batch_t,
                                           AdversarialForm form = AdversarialForm::kLog) {
  auto xg = gan::to_var(batch_g, Modality::kGrayscale, "adversarial_losses");
  auto xt = gan::to_var(batch_t, Modality::kInfrared, "adversarial_losses");
  auto fake_t = ad::detach(m.gen_g(xg));
  auto fake_g = ad::detach(m.gen_f(xt));
  auto sb_fake = m.disc_b(fake_t);
  auto sa_fake = m.disc_a(fake_g);
  AdversarialTerms t;
  t.loss_g_to_t = gan::generator_adv(sb_fake, form)->scalar();
  t.loss_t_to_g = gan::generator_adv(sa_fake, form)->scalar();
  t.disc_b = gan::discriminator_adv(m.disc_b(xt), sb_fake, form)->scalar();
  t.disc_a = gan::discriminator_adv(m.disc_a(xg), sa_fake, form)->scalar();
  return t;
}

/// mean|F(G(x_g)) - x_g| + mean|G(F(x_t)) - x_t| on the [-1,1] scale.
inline double cycle_consistency_loss(const GanModel& m, const std::vector<Image>& batch_g,
                                     const std::vector<Image>& batch_t) {
  auto xg = gan::to_var(batch_g, Modality::kGrayscale, "cycle_consistency_loss");
  auto xt = gan::to_var(batch_t, Modality::kInfrared, "cycle_consistency_loss");
  auto f = gan::run(m, xg, xt, false);
  return ad::mean_abs_diff(f.cyc_g, xg)->scalar() + ad::mean_abs_diff(f.cyc_t, xt)->scalar();
}

/// mean|G(x_t) - x_t| + mean|F(x_g) - x_g| on the [-1,1] scale.
inline double identity_mapping_loss(const GanModel& m, const std::vector<Image>& batch_g,
                                    const std::vector<Image>& batch_t) {
  auto xg = gan::to_var(batch_g, Modality::kGrayscale, "identity_mapping_loss");
  auto xt = gan::to_var(batch_t, Modality::kInfrared, "identity_mapping_loss");
  return ad::mean_abs_diff(m.gen_g(xt), xt)->scalar() + ad::mean_abs_diff(m.gen_f(xg), xg)->scalar();
}

/// Combines precomputed sub-losses: adversarial (generator side) +
/// lambda1 * cycle + lambda2 * identity.
inline LossBundle gan_objective_from_terms(const AdversarialTerms& adv, double cycle, double identity,
                                           const GanConfig& cfg) {
  cfg.validate();
  LossBundle b;
  b.terms = {{"adv_g_to_t", adv.loss_g_to_t},
             {"adv_t_to_g", adv.loss_t_to_g},
             {"cycle_weighted", cfg.lambda1 * cycle},
             {"identity_weighted", cfg.lambda2 * identity}};
  b.extras = {{"cycle", cycle}, {"identity", identity}, {"disc_a", adv.disc_a}, {"disc_b", adv.disc_b}};
  for (const auto& [name, v] : b.terms) {
    if (!std::isfinite(v)) fail(ErrorKind::kNumeric, "GAN loss term ", name, " is not finite");
  }
  b.total = b.sum_of_terms();
  return b;
}

inline LossBundle total_gan_objective(const GanModel& m, const std::vector<Image>& batch_g,
                                      const std::vector<Image>& batch_t, const GanConfig& cfg) {
  cfg.validate();
  return gan_objective_from_terms(adversarial_losses(m, batch_g, batch_t, cfg.form),
                                  cycle_consistency_loss(m, batch_g, batch_t),
                                  identity_mapping_loss(m, batch_g, batch_t), cfg);
}

struct GanTrainResult {
  GanModel model;
  std::vector<LossBundle> history;  // one per epoch, mean over steps
};

/// Alternating optimization: per step the discriminators are updated
/// against detached translations, then the generators are updated against
/// the refreshed discriminators. Adam for both. Deterministic given seed.
/// A non-null `init` is trained in place (its parameters are shared).
inline GanTrainResult train_gn(const std::vector<Image>& dataset_g, const std::vector<Image>& dataset_t,
                               const GanConfig& cfg, GanModel* init = nullptr) {
  cfg.validate();
  if (dataset_g.empty() || dataset_t.empty()) fail(ErrorKind::kData, "train_gn needs non-empty datasets");
  for (const auto& img : dataset_g) {
    if (img.modality != Modality::kGrayscale) fail(ErrorKind::kModality, "train_gn: grayscale set holds a ", to_string(img.modality), " image");
  }
  for (const auto& img : dataset_t) {
    if (img.modality != Modality::kInfrared) fail(ErrorKind::kModality, "train_gn: infrared set holds a ", to_string(img.modality), " image");
  }
  GanTrainResult result{init ? *init : GanModel(cfg.arch, cfg.seed), {}};
  GanModel& m = result.model;
  const auto gparams = m.generator_params();
  const auto dparams = m.discriminator_params();
  nn::Adam gopt(cfg.learning_rate, cfg.beta1, cfg.beta2);
  nn::Adam dopt(cfg.learning_rate, cfg.beta1, cfg.beta2);
  const bool with_identity = cfg.lambda2 > 0;
  const std::size_t steps = (std::max(dataset_g.size(), dataset_t.size()) + cfg.batch_size - 1) / cfg.batch_size;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 0x9a17, epoch));
    std::vector<std::size_t> og(dataset_g.size()), ot(dataset_t.size());
    std::iota(og.begin(), og.end(), 0);
    std::iota(ot.begin(), ot.end(), 0);
    shuffle(og, rng);
    shuffle(ot, rng);
    std::vector<double> acc(8, 0.0);
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<const Image*> bg, bt;
      for (int i = 0; i < cfg.batch_size; ++i) {
        const std::size_t k = s * cfg.batch_size + i;
        bg.push_back(&dataset_g[og[k % og.size()]]);
        bt.push_back(&dataset_t[ot[k % ot.size()]]);
      }
      auto xg = ad::constant(nn::images_to_tensor(bg));
      auto xt = ad::constant(nn::images_to_tensor(bt));
      auto f = gan::run(m, xg, xt, with_identity);

      // Discriminators, generators frozen (fakes detached).
      nn::zero_grads(dparams);
      auto loss_da = gan::discriminator_adv(m.disc_a(xg), m.disc_a(ad::detach(f.fake_g)), cfg.form);
      auto loss_db = gan::discriminator_adv(m.disc_b(xt), m.disc_b(ad::detach(f.fake_t)), cfg.form);
      ad::backward(ad::sum({loss_da, loss_db}));
      dopt.step(dparams);

      // Generators against the updated discriminators.
      nn::zero_grads(gparams);
      auto adv_gt = gan::generator_adv(m.disc_b(f.fake_t), cfg.form);
      auto adv_tg = gan::generator_adv(m.disc_a(f.fake_g), cfg.form);
      auto cyc = ad::sum({ad::mean_abs_diff(f.cyc_g, xg), ad::mean_abs_diff(f.cyc_t, xt)});
      std::vector<ad::Var> terms{adv_gt, adv_tg, cyc};
      std::vector<double> weights{1.0, 1.0, cfg.lambda1};
      ad::Var idt;
      if (with_identity) {
        idt = ad::sum({ad::mean_abs_diff(f.idt_t, xt), ad::mean_abs_diff(f.idt_g, xg)});
        terms.push_back(idt);
        weights.push_back(cfg.lambda2);
      }
      auto total = ad::weighted_sum(terms, weights);
      ad::backward(total);
      gopt.step(gparams);
      nn::zero_grads(dparams);

      const double vals[8] = {adv_gt->scalar(), adv_tg->scalar(),   cyc->scalar(),     idt ? idt->scalar() : 0.0,
                              loss_da->scalar(), loss_db->scalar(), total->scalar(),   0.0};
      for (int i = 0; i < 7; ++i) {
        if (!std::isfinite(vals[i])) {
          fail(ErrorKind::kNumeric, "GAN training diverged at epoch ", epoch, " step ", s, " (term ", i, ")");
        }
        acc[i] += vals[i];
      }
    }
    const double n = static_cast<double>(steps);
    AdversarialTerms adv{acc[0] / n, acc[1] / n, acc[4] / n, acc[5] / n};
    result.history.push_back(gan_objective_from_terms(adv, acc[2] / n, acc[3] / n, cfg));
    log_info("gan epoch ", epoch + 1, "/", cfg.epochs, " total=", result.history.back().total,
             " cycle=", acc[2] / n, " identity=", acc[3] / n);
  }
  return result;
}

/// Infrared -> grayscale with generator F. With `collapse_channels` the three
/// output channels are averaged so the result satisfies the grayscale
/// invariant (equal channels); without it the raw generator output is kept.
inline std::vector<Image> apply_gn(const GanModel& m, const std::vector<Image>& imgs, bool collapse_channels = true) {
  std::vector<Image> out;
  out.reserve(imgs.size());
  for (const auto& img : imgs) {
    if (img.modality != Modality::kInfrared) {
      fail(ErrorKind::kModality, "apply_gn expects infrared images, got ", to_string(img.modality));
    }
    auto y = m.gen_f(ad::constant(nn::images_to_tensor(std::vector<const Image*>{&img})));
    Image g = nn::tensor_to_image(y->value, 0, Modality::kGrayscale);
    if (collapse_channels) {
      for (int yy = 0; yy < g.height; ++yy)
        for (int x = 0; x < g.width; ++x) {
          double s = 0;
          for (int c = 0; c < 3; ++c) s += (y->value.at(0, c, yy, x) + 1.0) * 127.5;
          const auto v = round_to_byte(s / 3.0);
          for (int c = 0; c < 3; ++c) g.at(yy, x, c) = v;
        }
    }
    g.identity = img.identity;
    g.camera = img.camera;
    g.modality = Modality::kGrayscale;
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace agm

#endif  // AGM_GANSTYLE_HPP_
