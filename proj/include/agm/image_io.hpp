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

#ifndef AGM_IMAGE_IO_HPP_
#define AGM_IMAGE_IO_HPP_

#include <png.h>

#include <cstring>
#include <filesystem>
#include <string>

#include "agm/image.hpp"

namespace agm {

/// Reads any PNG as 8-bit RGB. Tags are left at their defaults except the
/// modality, which the caller supplies.
inline Image read_png(const std::filesystem::path& path, Modality modality) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    fail(ErrorKind::kIo, "cannot read PNG '", path.string(), "': ", png.message);
  }
  png.format = PNG_FORMAT_RGB;
  if (png.height < 1 || png.width < 1) {
    png_image_free(&png);
    fail(ErrorKind::kIo, "PNG '", path.string(), "' is empty");
  }
  Image img(static_cast<int>(png.height), static_cast<int>(png.width), modality);
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&png);
    fail(ErrorKind::kIo, "cannot decode PNG '", path.string(), "': ", png.message);
  }
  return img;
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorKind::kIo, "cannot create directory '", path.parent_path().string(), "': ", ec.message());
  }
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    fail(ErrorKind::kIo, "cannot write PNG '", path.string(), "': ", png.message);
  }
}

}  // namespace agm

#endif  // AGM_IMAGE_IO_HPP_
