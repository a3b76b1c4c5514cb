/******************************************************************************
 * Copyright 2026 The parcelbench Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *****************************************************************************/
#include "parcelbench/render.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>

#include "parcelbench/errors.hpp"

namespace parcelbench {

const std::array<Rgb, 12>& label_palette() {
  static const std::array<Rgb, 12> kPalette{{
      {0, 0, 0},
      {230, 25, 75},
      {60, 180, 75},
      {255, 225, 25},
      {0, 130, 200},
      {245, 130, 48},
      {145, 30, 180},
      {70, 240, 240},
      {240, 50, 230},
      {210, 245, 60},
      {250, 190, 212},
      {0, 128, 128},
  }};
  return kPalette;
}

Rgb label_color(LabelId id) {
  if (id <= 0) return label_palette()[0];
  return label_palette()[static_cast<std::size_t>(1 + (id - 1) % 11)];
}

Rgb Image::pixel(std::size_t x, std::size_t y) const {
  const std::size_t o = 3 * (y * width + x);
  return {rgb[o], rgb[o + 1], rgb[o + 2]};
}

namespace {

using VoxelColor = std::function<Rgb(std::size_t lin)>;

// Panels: axial (x right, y up), coronal (x right, z up), sagittal (y right, z up).
Image tri_planar(const Geometry& g, const VoxelColor& color, int scale) {
  if (scale < 1) throw DataError("render: scale must be >= 1");
  const auto [nx, ny, nz] = g.dims;
  const std::size_t s = static_cast<std::size_t>(scale);
  const std::size_t cx = nx / 2, cy = ny / 2, cz = nz / 2;
  struct Panel {
    std::size_t w, h;
    std::function<std::size_t(std::size_t, std::size_t)> voxel;  // (col, row from bottom)
  };
  const std::array<Panel, 3> panels{{
      {nx, ny, [&](std::size_t c, std::size_t r) { return g.linear(c, r, cz); }},
      {nx, nz, [&](std::size_t c, std::size_t r) { return g.linear(c, cy, r); }},
      {ny, nz, [&](std::size_t c, std::size_t r) { return g.linear(cx, c, r); }},
  }};
  Image img;
  std::size_t max_h = 0;
  for (const auto& p : panels) {
    img.width += p.w * s;
    max_h = std::max(max_h, p.h);
  }
  img.height = max_h * s;
  img.rgb.assign(img.width * img.height * 3, 0);
  std::size_t x0 = 0;
  for (const auto& p : panels) {
    for (std::size_t r = 0; r < p.h; ++r)
      for (std::size_t c = 0; c < p.w; ++c) {
        const Rgb col = color(p.voxel(c, r));
        const std::size_t top = (max_h - 1 - r) * s;
        for (std::size_t dy = 0; dy < s; ++dy)
          for (std::size_t dx = 0; dx < s; ++dx) {
            const std::size_t o = 3 * ((top + dy) * img.width + x0 + c * s + dx);
            img.rgb[o] = col[0];
            img.rgb[o + 1] = col[1];
            img.rgb[o + 2] = col[2];
          }
      }
    x0 += p.w * s;
  }
  return img;
}

}  // namespace

Image render_labels(const LabelVolume& seg, int scale) {
  return tri_planar(seg.geometry(), [&](std::size_t lin) { return label_color(seg.at(lin)); }, scale);
}

Image render_probability(const ProbabilityAtlas& atlas, int scale) {
  return tri_planar(
      atlas.max_prob.geometry(),
      [&](std::size_t lin) {
        std::array<double, 3> acc{0, 0, 0};
        for (const auto& [id, f] : atlas.frequency) {
          const double w = f.at(lin);
          if (w <= 0) continue;
          const Rgb c = label_color(id);
          for (int k = 0; k < 3; ++k) acc[static_cast<std::size_t>(k)] += w * c[static_cast<std::size_t>(k)];
        }
        Rgb out{};
        for (int k = 0; k < 3; ++k)
          out[static_cast<std::size_t>(k)] =
              static_cast<std::uint8_t>(std::lround(std::min(255.0, acc[static_cast<std::size_t>(k)])));
        return out;
      },
      scale);
}

void write_png(const Image& img, const std::string& path) {
  if (img.width == 0 || img.height == 0) throw DataError("render: empty image");
  std::unique_ptr<FILE, decltype(&std::fclose)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw DataError("cannot create " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("render: libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("render: libpng write failed for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.rgb.data() + 3 * y * img.width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace parcelbench
