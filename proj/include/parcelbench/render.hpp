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
#pragma once

/// Tri-planar PNG figures of label volumes and probability atlases.

#include <array>
#include <cstdint>
#include <string>

#include "parcelbench/metrics.hpp"
#include "parcelbench/volume.hpp"

namespace parcelbench {

using Rgb = std::array<std::uint8_t, 3>;

/// Fixed palette: entry 0 is background, ids cycle through entries 1..11.
const std::array<Rgb, 12>& label_palette();
Rgb label_color(LabelId id);

/// RGB raster, row-major, top row first.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;
  Rgb pixel(std::size_t x, std::size_t y) const;
};

/// Axial, coronal and sagittal mid-slices side by side, each voxel drawn as
/// a scale x scale block.
Image render_labels(const LabelVolume& seg, int scale = 4);
/// Per-voxel blend of label colors weighted by label frequency.
Image render_probability(const ProbabilityAtlas& atlas, int scale = 4);

void write_png(const Image& img, const std::string& path);

}  // namespace parcelbench
