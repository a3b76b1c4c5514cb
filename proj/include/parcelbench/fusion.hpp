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

/// Multi-atlas label fusion over priors already warped to the target grid.
///
/// Each prior votes for its own label at every masked voxel with weight
///   w_p(v) = 1 / (MSE_p(v)^beta + epsilon)
/// where MSE_p(v) is the mean squared intensity difference between the target
/// and the prior image over a (2r+1)^3 patch centred at v (clipped at the grid
/// border). The label with the largest summed weight wins; ties go to the
/// lower id. Background votes only win when no prior carries a nonzero label.

#include <vector>

#include "parcelbench/volume.hpp"

namespace parcelbench {

struct AtlasPrior {
  Volume intensity;
  LabelVolume labels;
};

struct FusionConfig {
  int patch_radius = 1;
  double weight_exponent = 2.0;
  double epsilon = 1e-6;

  void validate() const;
};

double patch_mse(const Volume& a, const Volume& b, const Index3& center, int radius);

LabelVolume fuse(const Volume& target, const std::vector<AtlasPrior>& priors, const Mask& mask,
                 const FusionConfig& cfg = {});

}  // namespace parcelbench
