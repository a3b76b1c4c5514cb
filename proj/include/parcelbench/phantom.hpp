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

/// Synthetic subjects with known ground truth: an ellipsoidal "thalamus"
/// split into wedge parcels, with structural, diffusion and BOLD images
/// generated from that parcellation.

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "parcelbench/fod.hpp"
#include "parcelbench/fusion.hpp"
#include "parcelbench/icp.hpp"
#include "parcelbench/volume.hpp"

namespace parcelbench {

struct PhantomSpec {
  std::array<std::size_t, 3> dims{48, 48, 48};
  double spacing_mm = 1.0;
  int n_regions = 11;
  std::uint64_t seed = 0;
  /// Relative noise level: Gaussian sigma = noise * 100 on the structural
  /// image, Rician sigma = noise * S0 on DWI, and Gaussian sigma = noise times
  /// the unit latent amplitude on BOLD.
  double noise_sigma = 0.0;
  std::size_t n_timepoints = 200;
  std::size_t n_directions = 64;
  double b_value = 1000.0;
  double s0 = 1000.0;
  double tr_seconds = 0.7;
  /// Diffusion images are generated on a grid this many times coarser.
  std::size_t dwi_downsample = 1;

  void validate() const;
};

struct PhantomSubject {
  LabelVolume truth;
  Mask mask;
  Volume structural;
};

struct DwiPhantom {
  Volume dwi;
  GradientTable grads;
  Mask mask;                           ///< on the diffusion grid
  LabelVolume truth;                   ///< on the diffusion grid
  std::vector<Eigen::Matrix3d> tensors;  ///< index r is region id r+1
};

struct BoldPhantom {
  TimeSeriesStack stack;
  Eigen::MatrixXd latent;  ///< n_regions x T, unit variance, mutually orthogonal
};

/// Truth, mask and structural image. Throws DataError if a parcel is empty.
PhantomSubject make_truth(const PhantomSpec& spec);

/// Three b=0 volumes followed by n_directions volumes at b_value.
DwiPhantom make_dwi(const PhantomSubject& subject, const PhantomSpec& spec);
/// Diffusion tensor of a region (mm^2/s): prolate, distinct principal axis.
Eigen::Matrix3d region_tensor(int region_id, const PhantomSpec& spec);
/// Principal axes spread to maximize the smallest pairwise axial angle.
std::vector<Eigen::Vector3d> spread_axes(std::size_t n);
double tensor_fa(const Eigen::Matrix3d& d);

BoldPhantom make_bold(const PhantomSubject& subject, const PhantomSpec& spec);
/// Adds `offset` to every voxel of one frame.
void inject_spike(TimeSeriesStack& stack, std::size_t frame, double offset);

/// Copies of (structural, truth) moved by a random translation of length
/// jitter_mm, plus fresh intensity noise, resampled onto the subject grid.
std::vector<AtlasPrior> make_priors(const PhantomSubject& subject, const PhantomSpec& spec,
                                    std::size_t n_priors, double jitter_mm);

}  // namespace parcelbench
