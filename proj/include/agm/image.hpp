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

#ifndef AGM_IMAGE_HPP_
#define AGM_IMAGE_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "agm/common.hpp"

namespace agm {

enum class Modality { kVisible, kInfrared, kGrayscale };

inline const char* to_string(Modality m) {
  switch (m) {
    case Modality::kVisible: return "visible";
    case Modality::kInfrared: return "infrared";
    case Modality::kGrayscale: return "grayscale";
  }
  return "?";
}

inline Modality parse_modality(std::string_view s) {
  if (s == "visible" || s == "rgb") return Modality::kVisible;
  if (s == "infrared" || s == "ir" || s == "thermal") return Modality::kInfrared;
  if (s == "grayscale" || s == "gray") return Modality::kGrayscale;
  fail(ErrorKind::kData, "unknown modality '", s, "'");
}

/// Interleaved 8-bit RGB raster tagged with modality, identity and camera.
/// Grayscale images keep three channels with the value replicated.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3, row-major HWC
  Modality modality = Modality::kVisible;
  int identity = 0;
  std::optional<int> camera;

  Image() = default;
  Image(int h, int w, Modality m = Modality::kVisible, int id = 0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0),
        modality(m), identity(id) {
    if (h < 1 || w < 1) fail(ErrorKind::kShape, "image size ", h, "x", w, " is degenerate");
  }

  std::size_t offset(int y, int x) const {
    return (static_cast<std::size_t>(y) * width + x) * 3;
  }
  std::uint8_t& at(int y, int x, int c) { return pixels[offset(y, x) + c]; }
  std::uint8_t at(int y, int x, int c) const { return pixels[offset(y, x) + c]; }

  void set(int y, int x, std::array<std::uint8_t, 3> rgb) {
    const std::size_t o = offset(y, x);
    pixels[o] = rgb[0];
    pixels[o + 1] = rgb[1];
    pixels[o + 2] = rgb[2];
  }

  /// Copies the tags (modality, identity, camera) of another image.
  Image& tag_like(const Image& other) {
    modality = other.modality;
    identity = other.identity;
    camera = other.camera;
    return *this;
  }

  bool channels_equal() const {
    for (std::size_t i = 0; i < pixels.size(); i += 3) {
      if (pixels[i] != pixels[i + 1] || pixels[i] != pixels[i + 2]) return false;
    }
    return true;
  }

  friend bool operator==(const Image& a, const Image& b) {
    return a.height == b.height && a.width == b.width && a.pixels == b.pixels &&
           a.modality == b.modality && a.identity == b.identity && a.camera == b.camera;
  }
};

inline std::uint8_t clamp_to_byte(double v) {
  if (!(v > 0.0)) return 0;  // also maps NaN to 0
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(v);
}

// Round half up, then clamp. The 1e-9 nudge keeps exact .5 values from
// falling to the lower integer through representation error.
inline std::uint8_t round_to_byte(double v) {
  return clamp_to_byte(std::floor(v + 0.5 + 1e-9));
}

}  // namespace agm

#endif  // AGM_IMAGE_HPP_
