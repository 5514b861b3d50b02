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

// Pixel-space transforms: graying, head-shoulder cropping, bilinear resize
// and the two training augmentations (random crop, random erasing).

#ifndef AGM_IMAGING_HPP_
#define AGM_IMAGING_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>

#include "agm/common.hpp"
#include "agm/image.hpp"

namespace agm {

struct GrayscaleCoeffs {
  double alpha1 = 0.299;  // red
  double alpha2 = 0.587;  // green
  double alpha3 = 0.114;  // blue

  void validate() const {
    if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0) {
      fail(ErrorKind::kConfig, "grayscale coefficients must be non-negative");
    }
  }
};

/// Visible image to replicated 3-channel grayscale. Each output value is
/// round-half-up(a1*R + a2*G + a3*B), clamped to [0,255].
inline Image to_grayscale(const Image& img, const GrayscaleCoeffs& coeffs = {}) {
  if (img.modality != Modality::kVisible) {
    fail(ErrorKind::kModality, "to_grayscale expects a visible image, got ", to_string(img.modality));
  }
  coeffs.validate();
  Image out(img.height, img.width);
  out.tag_like(img);
  out.modality = Modality::kGrayscale;
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    const double g = coeffs.alpha1 * img.pixels[i] + coeffs.alpha2 * img.pixels[i + 1] +
                     coeffs.alpha3 * img.pixels[i + 2];
    const std::uint8_t v = round_to_byte(g);
    out.pixels[i] = out.pixels[i + 1] = out.pixels[i + 2] = v;
  }
  return out;
}

/// Keeps rows [0, floor(H/3)) and every column.
inline Image crop_head_shoulder(const Image& img) {
  if (img.height < 3) {
    fail(ErrorKind::kShape, "head-shoulder crop needs height >= 3, got ", img.height);
  }
  const int rows = img.height / 3;
  Image out(rows, img.width);
  out.tag_like(img);
  std::copy_n(img.pixels.begin(), static_cast<std::size_t>(rows) * img.width * 3, out.pixels.begin());
  return out;
}

/// Bilinear resize with half-pixel centres; identical sizes copy exactly.
inline Image resize(const Image& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) {
    fail(ErrorKind::kShape, "resize target ", out_h, "x", out_w, " must be positive");
  }
  if (out_h == img.height && out_w == img.width) return img;
  Image out(out_h, out_w);
  out.tag_like(img);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c);
        const double bottom = (1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c);
        out.at(y, x, c) = round_to_byte((1 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

/// Mean over pixels of (max - min) across the three channels.
inline double channel_spread(const Image& img) {
  double total = 0;
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    const auto [lo, hi] = std::minmax({img.pixels[i], img.pixels[i + 1], img.pixels[i + 2]});
    total += hi - lo;
  }
  return total / static_cast<double>(img.pixels.size() / 3);
}

struct AugmentPolicy {
  int crop_padding = 10;
  double erase_probability = 0.5;
  std::pair<double, double> erase_area_range{0.02, 0.4};
  std::pair<double, double> erase_aspect_range{0.3, 3.3};
  std::uint64_t seed = 0;

  void validate() const {
    if (crop_padding < 0) fail(ErrorKind::kConfig, "crop_padding must be >= 0");
    if (!(erase_probability >= 0.0 && erase_probability <= 1.0)) {
      fail(ErrorKind::kConfig, "erase_probability must lie in [0,1]");
    }
    if (!(erase_area_range.first > 0 && erase_area_range.first <= erase_area_range.second &&
          erase_area_range.second <= 1.0)) {
      fail(ErrorKind::kConfig, "erase_area_range must be ordered within (0,1]");
    }
    if (!(erase_aspect_range.first > 0 && erase_aspect_range.first <= erase_aspect_range.second)) {
      fail(ErrorKind::kConfig, "erase_aspect_range must be positive and ordered");
    }
  }
};

/// What augment() actually sampled; useful for checking policy bounds.
struct AugmentTrace {
  int crop_dy = 0;
  int crop_dx = 0;
  bool erased = false;
  int erase_y = 0, erase_x = 0, erase_h = 0, erase_w = 0;
  double erase_target_area = 0;    // sampled area in pixels
  double erase_target_aspect = 0;  // sampled h/w ratio
};

namespace detail {

inline constexpr int kEraseAttempts = 10;

}  // namespace detail

/// Random crop (zero-padded by policy.crop_padding, cropped back to the
/// original size) followed by random erasing with uniform noise. The result
/// depends only on (img, policy).
inline Image augment(const Image& img, const AugmentPolicy& policy, AugmentTrace* trace = nullptr) {
  policy.validate();
  Rng rng(policy.seed);
  AugmentTrace local;
  AugmentTrace& t = trace ? *trace : local;
  t = AugmentTrace{};

  Image out = img;
  const int pad = policy.crop_padding;
  if (pad > 0) {
    t.crop_dy = static_cast<int>(uniform_index(rng, 2 * pad + 1)) - pad;
    t.crop_dx = static_cast<int>(uniform_index(rng, 2 * pad + 1)) - pad;
    std::fill(out.pixels.begin(), out.pixels.end(), 0);
    for (int y = 0; y < img.height; ++y) {
      const int sy = y + t.crop_dy;
      if (sy < 0 || sy >= img.height) continue;
      for (int x = 0; x < img.width; ++x) {
        const int sx = x + t.crop_dx;
        if (sx < 0 || sx >= img.width) continue;
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
      }
    }
  }

  if (policy.erase_probability > 0 && uniform01(rng) < policy.erase_probability) {
    const double area = static_cast<double>(img.height) * img.width;
    for (int attempt = 0; attempt < detail::kEraseAttempts; ++attempt) {
      const double target = area * uniform(rng, policy.erase_area_range.first, policy.erase_area_range.second);
      const double aspect = uniform(rng, policy.erase_aspect_range.first, policy.erase_aspect_range.second);
      const int h = static_cast<int>(std::lround(std::sqrt(target * aspect)));
      const int w = static_cast<int>(std::lround(std::sqrt(target / aspect)));
      if (h < 1 || w < 1 || h >= img.height || w >= img.width) continue;
      const int y0 = static_cast<int>(uniform_index(rng, img.height - h + 1));
      const int x0 = static_cast<int>(uniform_index(rng, img.width - w + 1));
      const bool gray = img.modality == Modality::kGrayscale;
      for (int y = y0; y < y0 + h; ++y) {
        for (int x = x0; x < x0 + w; ++x) {
          if (gray) {
            const auto v = static_cast<std::uint8_t>(uniform_index(rng, 256));
            out.set(y, x, {v, v, v});
          } else {
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<std::uint8_t>(uniform_index(rng, 256));
          }
        }
      }
      t.erased = true;
      t.erase_y = y0;
      t.erase_x = x0;
      t.erase_h = h;
      t.erase_w = w;
      t.erase_target_area = target;
      t.erase_target_aspect = aspect;
      break;
    }
  }
  return out;
}

}  // namespace agm

#endif  // AGM_IMAGING_HPP_
