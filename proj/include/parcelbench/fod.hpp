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

/// Q-ball reconstruction: real symmetric spherical harmonics up to order 6,
/// regularized least-squares fitting, Funk-Radon transform, and resampling of
/// the per-voxel coefficient field.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "parcelbench/volume.hpp"

namespace parcelbench {

/// Entries with b below this are treated as non-diffusion-weighted.
constexpr double kB0Threshold = 50.0;

struct GradientTable {
  std::vector<Eigen::Vector3d> directions;
  std::vector<double> bvals;

  std::size_t size() const { return bvals.size(); }
  std::vector<std::size_t> b0_indices() const;
  std::vector<std::size_t> dw_indices() const;
  /// Unit-norm diffusion directions (1e-6) and at least 28 weighted entries.
  void validate() const;

  /// Whitespace separated `gx gy gz b`, one line per volume; '#' comments.
  static GradientTable read(const std::string& path);
  void write(const std::string& path) const;
};

/// Quasi-uniform unit vectors on the sphere (Fibonacci lattice).
std::vector<Eigen::Vector3d> fibonacci_sphere(std::size_t n);
/// Same lattice restricted to z >= 0; suited to antipodally symmetric signals.
std::vector<Eigen::Vector3d> fibonacci_hemisphere(std::size_t n);

/// Real symmetric SH basis. Coefficient j enumerates even l ascending, then
/// m = -l..l ascending, so j = l(l+1)/2 + m. For m < 0 the function is
/// sqrt(2)*Im(Y_l^|m|), m = 0 gives Y_l^0, m > 0 gives sqrt(2)*Re(Y_l^m);
/// Y_l^m carries the Condon-Shortley phase.
class ShBasis {
 public:
  explicit ShBasis(int order = 6);

  int order() const { return order_; }
  int n_coeffs() const { return (order_ + 1) * (order_ + 2) / 2; }
  int degree(int j) const { return degree_[static_cast<std::size_t>(j)]; }
  int azimuthal(int j) const { return azimuthal_[static_cast<std::size_t>(j)]; }
  static int index(int l, int m) { return l * (l + 1) / 2 + m; }

  Eigen::VectorXd evaluate(const Eigen::Vector3d& dir) const;

 private:
  int order_;
  std::vector<int> degree_;
  std::vector<int> azimuthal_;
};

/// Rows are directions, columns basis functions. Needs at least n_coeffs rows.
Eigen::MatrixXd sh_design_matrix(const ShBasis& basis, const std::vector<Eigen::Vector3d>& dirs);

/// Precomputed (B'B + lambda*L'L)^-1 B' for a fixed direction set, with
/// L = diag(l(l+1)) the Laplace-Beltrami penalty.
class ShFitter {
 public:
  ShFitter(const ShBasis& basis, const std::vector<Eigen::Vector3d>& dirs, double lambda);
  Eigen::VectorXd fit(const Eigen::Ref<const Eigen::VectorXd>& signal) const;
  const Eigen::MatrixXd& solve_matrix() const { return solve_; }

 private:
  Eigen::MatrixXd solve_;
};

Eigen::VectorXd fit_sh(const Eigen::VectorXd& signal, const std::vector<Eigen::Vector3d>& dirs,
                       const ShBasis& basis, double lambda = 0.006);

/// 2*pi*P_l(0).
double funk_radon_factor(int l);
Eigen::VectorXd funk_radon(const Eigen::VectorXd& coeffs, const ShBasis& basis = ShBasis(6));

/// Per-voxel coefficient vectors over a mask. Row r of coeffs belongs to the
/// r-th on-voxel of the mask in ascending linear order.
struct ShField {
  Mask mask;
  Eigen::MatrixXd coeffs;
  /// Linear indices whose mean b=0 signal was not positive (coefficients 0).
  std::vector<std::size_t> skipped;

  const Geometry& geometry() const { return mask.geometry(); }
  std::size_t size() const { return static_cast<std::size_t>(coeffs.rows()); }
};

struct FodConfig {
  double lambda = 0.006;
  bool use_frt = true;
};

ShField fit_field(const Volume& dwi, const GradientTable& grads, const Mask& mask,
                  const ShBasis& basis = ShBasis(6), const FodConfig& cfg = {});

/// Per-channel trilinear interpolation onto `target`. The mask is resampled
/// by nearest neighbour and only in-mask source voxels contribute to each
/// interpolated value (weights renormalized at the mask border).
ShField upsample_field(const ShField& f, const Geometry& target);

/// Grid with the given isotropic spacing covering the same world box.
Geometry isotropic_geometry(const Geometry& g, double spacing_mm = 1.0);

/// 4D NIfTI with one frame per coefficient, plus a mask file.
void write_sh_field(const ShField& f, const std::string& coeff_path, const std::string& mask_path);
ShField read_sh_field(const std::string& coeff_path, const std::string& mask_path);

}  // namespace parcelbench
