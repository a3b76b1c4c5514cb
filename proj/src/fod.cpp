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
#include "parcelbench/fod.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "parcelbench/errors.hpp"
#include "parcelbench/nifti.hpp"
#include "parcelbench/parallel.hpp"

namespace parcelbench {

std::vector<std::size_t> GradientTable::b0_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bvals.size(); ++i)
    if (bvals[i] < kB0Threshold) out.push_back(i);
  return out;
}

std::vector<std::size_t> GradientTable::dw_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bvals.size(); ++i)
    if (bvals[i] >= kB0Threshold) out.push_back(i);
  return out;
}

void GradientTable::validate() const {
  if (directions.size() != bvals.size())
    throw DataError("gradient table: direction and b-value counts differ");
  const auto dw = dw_indices();
  for (std::size_t i : dw)
    if (std::abs(directions[i].norm() - 1.0) > 1e-6)
      throw DataError("gradient table: direction " + std::to_string(i) + " is not unit norm");
  if (dw.size() < 28)
    throw DataError("gradient table: need at least 28 diffusion-weighted entries, have " +
                    std::to_string(dw.size()));
}

GradientTable GradientTable::read(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open gradient table " + path);
  GradientTable g;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    double x, y, z, b;
    if (!(ls >> x)) continue;
    if (!(ls >> y >> z >> b))
      throw DataError(path + ":" + std::to_string(lineno) + ": expected `gx gy gz b`");
    g.directions.emplace_back(x, y, z);
    g.bvals.push_back(b);
  }
  return g;
}

void GradientTable::write(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot create gradient table " + path);
  os.precision(17);
  for (std::size_t i = 0; i < size(); ++i)
    os << directions[i].x() << ' ' << directions[i].y() << ' ' << directions[i].z() << ' '
       << bvals[i] << '\n';
}

std::vector<Eigen::Vector3d> fibonacci_sphere(std::size_t n) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(n);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * static_cast<double>(i);
    out.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
  }
  return out;
}

std::vector<Eigen::Vector3d> fibonacci_hemisphere(std::size_t n) {
  auto full = fibonacci_sphere(2 * n);
  full.resize(n);  // first half of the lattice has z > 0
  return full;
}

ShBasis::ShBasis(int order) : order_(order) {
  if (order < 0 || order % 2 != 0) throw DataError("SH order must be even and >= 0");
  for (int l = 0; l <= order; l += 2)
    for (int m = -l; m <= l; ++m) {
      degree_.push_back(l);
      azimuthal_.push_back(m);
    }
}

Eigen::VectorXd ShBasis::evaluate(const Eigen::Vector3d& dir) const {
  const Eigen::Vector3d u = dir.normalized();
  const double theta = std::acos(std::clamp(u.z(), -1.0, 1.0));
  const double phi = std::atan2(u.y(), u.x());
  Eigen::VectorXd out(n_coeffs());
  for (int j = 0; j < n_coeffs(); ++j) {
    const int l = degree(j);
    const int m = azimuthal(j);
    const auto ul = static_cast<unsigned>(l);
    const auto um = static_cast<unsigned>(std::abs(m));
    // std::sph_legendre includes normalization and the (-1)^m phase.
    const double y = std::sph_legendre(ul, um, theta);
    if (m == 0)
      out[j] = y;
    else if (m > 0)
      out[j] = std::numbers::sqrt2 * y * std::cos(m * phi);
    else
      out[j] = std::numbers::sqrt2 * y * std::sin(-m * phi);
  }
  return out;
}

Eigen::MatrixXd sh_design_matrix(const ShBasis& basis, const std::vector<Eigen::Vector3d>& dirs) {
  if (dirs.size() < static_cast<std::size_t>(basis.n_coeffs()))
    throw DataError("SH design: " + std::to_string(dirs.size()) + " directions for " +
                    std::to_string(basis.n_coeffs()) + " coefficients is underdetermined");
  Eigen::MatrixXd b(static_cast<Eigen::Index>(dirs.size()), basis.n_coeffs());
  for (std::size_t i = 0; i < dirs.size(); ++i)
    b.row(static_cast<Eigen::Index>(i)) = basis.evaluate(dirs[i]).transpose();
  return b;
}

ShFitter::ShFitter(const ShBasis& basis, const std::vector<Eigen::Vector3d>& dirs, double lambda) {
  if (!(lambda >= 0.0)) throw DataError("Laplace-Beltrami weight must be >= 0");
  const Eigen::MatrixXd b = sh_design_matrix(basis, dirs);
  Eigen::MatrixXd normal = b.transpose() * b;
  for (int j = 0; j < basis.n_coeffs(); ++j) {
    const double l = basis.degree(j);
    normal(j, j) += lambda * l * l * (l + 1) * (l + 1);
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(normal);
  if (!lu.isInvertible()) throw NumericalError("SH normal matrix is singular");
  solve_ = lu.solve(b.transpose());
}

Eigen::VectorXd ShFitter::fit(const Eigen::Ref<const Eigen::VectorXd>& signal) const {
  if (signal.size() != solve_.cols()) throw DataError("SH fit: signal length mismatch");
  if (!signal.allFinite()) throw DataError("SH fit: signal is not finite");
  return solve_ * signal;
}

Eigen::VectorXd fit_sh(const Eigen::VectorXd& signal, const std::vector<Eigen::Vector3d>& dirs,
                       const ShBasis& basis, double lambda) {
  return ShFitter(basis, dirs, lambda).fit(signal);
}

double funk_radon_factor(int l) {
  // P_l(0) = (-1)^(l/2) (l-1)!! / l!! for even l.
  // Integer ratio, one rounding: exact whenever P_l(0) is representable.
  if (l < 0 || l % 2 != 0) throw DataError("Funk-Radon factor needs an even degree");
  std::int64_t num = 1, den = 1;
  for (int k = 2; k <= l; k += 2) {
    num *= k - 1;
    den *= k;
  }
  const double p = static_cast<double>(num) / static_cast<double>(den);
  return 2.0 * std::numbers::pi * ((l / 2) % 2 == 0 ? p : -p);
}

Eigen::VectorXd funk_radon(const Eigen::VectorXd& coeffs, const ShBasis& basis) {
  if (coeffs.size() != basis.n_coeffs()) throw DataError("Funk-Radon: coefficient count mismatch");
  Eigen::VectorXd out(coeffs.size());
  for (int j = 0; j < basis.n_coeffs(); ++j) out[j] = funk_radon_factor(basis.degree(j)) * coeffs[j];
  return out;
}

ShField fit_field(const Volume& dwi, const GradientTable& grads, const Mask& mask,
                  const ShBasis& basis, const FodConfig& cfg) {
  if (dwi.nt() != grads.size())
    throw DataError("fit_field: " + std::to_string(dwi.nt()) + " volumes but " +
                    std::to_string(grads.size()) + " gradient entries");
  require_same_grid(dwi.geometry(), mask.geometry(), "fit_field");
  grads.validate();
  const auto b0 = grads.b0_indices();
  if (b0.empty()) throw DataError("fit_field: gradient table has no b=0 entry");
  const auto dw = grads.dw_indices();

  std::vector<Eigen::Vector3d> dirs;
  for (std::size_t i : dw) dirs.push_back(grads.directions[i]);
  const ShFitter fitter(basis, dirs, cfg.lambda);

  ShField f;
  f.mask = mask;
  const auto voxels = mask.voxels();
  f.coeffs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(voxels.size()), basis.n_coeffs());
  std::vector<std::uint8_t> skip(voxels.size(), 0);

  parallel_for(voxels.size(), [&](std::size_t r) {
    const std::size_t lin = voxels[r];
    double s0 = 0.0;
    for (std::size_t i : b0) s0 += dwi.at(lin, i);
    s0 /= static_cast<double>(b0.size());
    if (!(s0 > 0.0)) {
      skip[r] = 1;
      return;
    }
    Eigen::VectorXd s(static_cast<Eigen::Index>(dw.size()));
    for (std::size_t i = 0; i < dw.size(); ++i) s[static_cast<Eigen::Index>(i)] = dwi.at(lin, dw[i]) / s0;
    Eigen::VectorXd c = fitter.fit(s);
    if (cfg.use_frt) c = funk_radon(c, basis);
    f.coeffs.row(static_cast<Eigen::Index>(r)) = c.transpose();
  });
  for (std::size_t r = 0; r < voxels.size(); ++r)
    if (skip[r]) f.skipped.push_back(voxels[r]);
  return f;
}

ShField upsample_field(const ShField& f, const Geometry& target) {
  target.validate();
  const Geometry& sg = f.geometry();
  const Eigen::Index nc = f.coeffs.cols();

  // Row of each source voxel in f.coeffs, or -1 outside the mask.
  std::vector<std::int64_t> row_of(sg.num_voxels(), -1);
  {
    std::int64_t r = 0;
    for (std::size_t lin : f.mask.voxels()) row_of[lin] = r++;
  }

  ShField out;
  out.mask = resample_nearest(f.mask, target);
  const auto voxels = out.mask.voxels();
  out.coeffs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(voxels.size()), nc);
  const Eigen::Matrix4d m = sg.affine.inverse().matrix() * target.affine.matrix();

  parallel_for(voxels.size(), [&](std::size_t r) {
    const Index3 t = target.unravel(voxels[r]);
    const Eigen::Vector4d p = m * Eigen::Vector4d(static_cast<double>(t[0]), static_cast<double>(t[1]),
                                                  static_cast<double>(t[2]), 1.0);
    std::array<std::size_t, 3> lo{};
    std::array<double, 3> frac{};
    Index3 nearest{};
    for (int a = 0; a < 3; ++a) {
      const double hi = static_cast<double>(sg.dims[a] - 1);
      const double x = std::clamp(p[a], 0.0, hi);
      double fl = std::floor(x);
      if (fl >= hi) fl = std::max(hi - 1.0, 0.0);
      lo[a] = static_cast<std::size_t>(fl);
      frac[a] = sg.dims[a] == 1 ? 0.0 : x - fl;
      nearest[a] = static_cast<std::int64_t>(std::ceil(x - 0.5));
    }
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(nc);
    double wsum = 0.0;
    for (int c = 0; c < 8; ++c) {
      std::array<std::size_t, 3> idx{};
      double w = 1.0;
      for (int a = 0; a < 3; ++a) {
        const bool up = (c >> a) & 1;
        idx[a] = std::min(lo[a] + (up ? 1 : 0), sg.dims[a] - 1);
        w *= up ? frac[a] : 1.0 - frac[a];
      }
      if (w == 0.0) continue;
      const std::int64_t row = row_of[sg.linear(idx[0], idx[1], idx[2])];
      if (row < 0) continue;
      acc += w * f.coeffs.row(row).transpose();
      wsum += w;
    }
    if (wsum > 0.0) {
      out.coeffs.row(static_cast<Eigen::Index>(r)) = (acc / wsum).transpose();
    } else {
      const std::int64_t row = row_of[sg.linear(static_cast<std::size_t>(nearest[0]),
                                                static_cast<std::size_t>(nearest[1]),
                                                static_cast<std::size_t>(nearest[2]))];
      if (row >= 0) out.coeffs.row(static_cast<Eigen::Index>(r)) = f.coeffs.row(row);
    }
  });
  return out;
}

Geometry isotropic_geometry(const Geometry& g, double spacing_mm) {
  Geometry out;
  Eigen::Matrix4d m = g.affine.matrix();
  for (int a = 0; a < 3; ++a) {
    const double extent = static_cast<double>(g.dims[a] - 1) * g.spacing[a];
    out.dims[a] = static_cast<std::size_t>(std::floor(extent / spacing_mm + 1e-9)) + 1;
    out.spacing[a] = spacing_mm;
    m.block<3, 1>(0, a) *= spacing_mm / g.spacing[a];
  }
  out.affine = Affine(m);
  out.validate();
  return out;
}

void write_sh_field(const ShField& f, const std::string& coeff_path, const std::string& mask_path) {
  const auto nc = static_cast<std::size_t>(f.coeffs.cols());
  Volume v(f.geometry(), nc);
  v.set_ndim(4);
  const auto voxels = f.mask.voxels();
  for (std::size_t r = 0; r < voxels.size(); ++r)
    for (std::size_t c = 0; c < nc; ++c)
      v.at(voxels[r], c) = f.coeffs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  write_nifti(v, coeff_path);
  write_nifti(f.mask, mask_path);
}

ShField read_sh_field(const std::string& coeff_path, const std::string& mask_path) {
  const Volume v = read_nifti(coeff_path);
  ShField f;
  f.mask = read_mask_nifti(mask_path);
  require_same_grid(v.geometry(), f.mask.geometry(), "SH field");
  const auto voxels = f.mask.voxels();
  f.coeffs.resize(static_cast<Eigen::Index>(voxels.size()), static_cast<Eigen::Index>(v.nt()));
  for (std::size_t r = 0; r < voxels.size(); ++r)
    for (std::size_t c = 0; c < v.nt(); ++c)
      f.coeffs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v.at(voxels[r], c);
  return f;
}

}  // namespace parcelbench
