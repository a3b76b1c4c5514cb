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
#include "parcelbench/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "parcelbench/errors.hpp"
#include "parcelbench/parallel.hpp"

namespace parcelbench {

void FusionConfig::validate() const {
  if (patch_radius < 0) throw DataError("fusion: patch_radius must be >= 0");
  if (!(weight_exponent > 0)) throw DataError("fusion: weight exponent must be > 0");
  if (!(epsilon > 0)) throw DataError("fusion: epsilon must be > 0");
}

double patch_mse(const Volume& a, const Volume& b, const Index3& center, int radius) {
  require_same_grid(a.geometry(), b.geometry(), "patch_mse");
  const Geometry& g = a.geometry();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::int64_t dk = -radius; dk <= radius; ++dk)
    for (std::int64_t dj = -radius; dj <= radius; ++dj)
      for (std::int64_t di = -radius; di <= radius; ++di) {
        const Index3 q{center[0] + di, center[1] + dj, center[2] + dk};
        if (!g.contains(q)) continue;
        const std::size_t lin = g.linear(static_cast<std::size_t>(q[0]), static_cast<std::size_t>(q[1]),
                                         static_cast<std::size_t>(q[2]));
        const double d = a.at(lin) - b.at(lin);
        sum += d * d;
        ++n;
      }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

LabelVolume fuse(const Volume& target, const std::vector<AtlasPrior>& priors, const Mask& mask,
                 const FusionConfig& cfg) {
  cfg.validate();
  if (priors.empty()) throw DataError("fusion: empty prior list");
  const Geometry& g = target.geometry();
  require_same_grid(g, mask.geometry(), "fusion mask");
  LabelDictionary names;
  for (const auto& p : priors) {
    require_same_grid(g, p.intensity.geometry(), "fusion prior image");
    require_same_grid(g, p.labels.geometry(), "fusion prior labels");
    for (const auto& [id, name] : p.labels.names()) names.emplace(id, name);
  }

  LabelVolume out(g, names);
  const auto voxels = mask.voxels();
  parallel_for(voxels.size(), [&](std::size_t r) {
    const std::size_t lin = voxels[r];
    const Index3 c = g.unravel(lin);
    std::vector<std::pair<LabelId, double>> contrib;
    contrib.reserve(priors.size());
    for (const auto& p : priors) {
      const double mse = patch_mse(target, p.intensity, c, cfg.patch_radius);
      contrib.emplace_back(p.labels.at(lin), 1.0 / (std::pow(mse, cfg.weight_exponent) + cfg.epsilon));
    }
    // Sorted summation makes the result independent of prior order.
    std::sort(contrib.begin(), contrib.end());
    std::map<LabelId, double> votes;
    for (const auto& [id, w] : contrib) votes[id] += w;
    // Only positive support counts, so a prior whose weight has underflowed
    // to zero cannot label a voxel.
    LabelId best = 0;
    double best_w = 0.0;
    for (const auto& [id, w] : votes) {  // ascending id, strict > keeps the lower id on ties
      if (id == 0) continue;
      if (w > best_w) {
        best = id;
        best_w = w;
      }
    }
    out.at(lin) = best;
  });
  return out;
}

}  // namespace parcelbench
