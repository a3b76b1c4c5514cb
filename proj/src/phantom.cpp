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
#include "parcelbench/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "parcelbench/errors.hpp"
#include "parcelbench/random.hpp"

namespace parcelbench {

namespace {

// Stream ids for make_stream(spec.seed, ...).
enum Stream : std::uint64_t {
  kGeometry = 1,
  kStructuralNoise = 2,
  kDwiNoise = 3,
  kBoldLatent = 4,
  kBoldNoise = 5,
  kTensor = 6,
  kPriorBase = 1000,
};

constexpr double kMeanDiffusivity = 0.8e-3;
constexpr double kBackgroundIntensity = 20.0;

Geometry subject_geometry(const PhantomSpec& spec) {
  const std::array<double, 3> s{spec.spacing_mm, spec.spacing_mm, spec.spacing_mm};
  Eigen::Vector3d origin;
  for (int a = 0; a < 3; ++a) origin[a] = -0.5 * static_cast<double>(spec.dims[a] - 1) * spec.spacing_mm;
  return Geometry::make(spec.dims, s, origin);
}

LabelDictionary phantom_dictionary(int n) {
  return n == 11 ? nucleus_dictionary() : numeric_dictionary(n, "C");
}

}  // namespace

void PhantomSpec::validate() const {
  if (n_regions < 2) throw DataError("phantom: n_regions must be >= 2");
  if (!(spacing_mm > 0)) throw DataError("phantom: spacing must be positive");
  if (!(noise_sigma >= 0)) throw DataError("phantom: noise_sigma must be >= 0");
  if (n_directions < 28) throw DataError("phantom: need at least 28 diffusion directions");
  if (dwi_downsample < 1) throw DataError("phantom: dwi_downsample must be >= 1");
  for (auto d : dims)
    if (d < 1) throw DataError("phantom: grid dims must be >= 1");
}

PhantomSubject make_truth(const PhantomSpec& spec) {
  spec.validate();
  const Geometry geom = subject_geometry(spec);
  Rng rng = make_stream(spec.seed, kGeometry);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Semi-axes as fractions of the half-extent, jittered by up to 5%.
  const std::array<double, 3> frac{0.80, 0.66, 0.56};
  std::array<double, 3> semi{};
  for (int a = 0; a < 3; ++a)
    semi[a] = frac[a] * (1.0 + 0.1 * (unit(rng) - 0.5)) * 0.5 *
              static_cast<double>(spec.dims[a]) * spec.spacing_mm;

  // Inner core split into n_inner wedges, outer shell into the rest. Core
  // parcels get half the nominal volume of shell parcels, so the parcel sizes
  // are unequal (equal-volume tilings leave spatial ICA without a preferred
  // rotation).
  const int n = spec.n_regions;
  const int n_inner = n >= 4 ? std::max(1, n / 4) : 0;
  const int n_outer = n - n_inner;
  const double inner_radius = std::cbrt(static_cast<double>(n_inner) / (2.0 * static_cast<double>(n)));
  const double twopi = 2.0 * std::numbers::pi;
  const double outer_offset = unit(rng) * twopi / n_outer;
  const double inner_offset = n_inner > 0 ? unit(rng) * twopi / n_inner : 0.0;

  LabelVolume truth(geom, phantom_dictionary(n));
  std::vector<std::uint8_t> on(geom.num_voxels(), 0);
  for (std::size_t lin = 0; lin < geom.num_voxels(); ++lin) {
    const Eigen::Vector3d p = geom.world(lin);
    const Eigen::Vector3d u(p.x() / semi[0], p.y() / semi[1], p.z() / semi[2]);
    const double rho = u.norm();
    if (rho > 1.0) continue;
    const double phi = std::atan2(u.y(), u.x()) + std::numbers::pi;  // [0, 2pi]
    LabelId id;
    if (rho < inner_radius) {
      const double a = std::fmod(phi - inner_offset + twopi, twopi);
      id = 1 + std::min(n_inner - 1, static_cast<int>(a / (twopi / n_inner)));
    } else {
      const double a = std::fmod(phi - outer_offset + twopi, twopi);
      id = 1 + n_inner + std::min(n_outer - 1, static_cast<int>(a / (twopi / n_outer)));
    }
    truth.at(lin) = id;
    on[lin] = 1;
  }
  for (LabelId id = 1; id <= n; ++id)
    if (truth.count(id) == 0)
      throw DataError("phantom: grid too small to hold " + std::to_string(n) + " nonempty parcels");

  PhantomSubject s{std::move(truth), Mask(geom, std::move(on)), Volume(geom)};

  // Region intensities evenly spread over [60, 140] in a seeded order.
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);
  Rng noise_rng = make_stream(spec.seed, kStructuralNoise);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double sigma = spec.noise_sigma * 100.0;
  for (std::size_t lin = 0; lin < geom.num_voxels(); ++lin) {
    const LabelId id = s.truth.at(lin);
    double v = kBackgroundIntensity;
    if (id > 0) v = 60.0 + 80.0 * order[static_cast<std::size_t>(id - 1)] / std::max(1, n - 1);
    if (sigma > 0) v += sigma * gauss(noise_rng);
    s.structural.at(lin) = v;
  }
  return s;
}

std::vector<Eigen::Vector3d> spread_axes(std::size_t n) {
  std::vector<Eigen::Vector3d> x = fibonacci_hemisphere(n);
  if (n < 2) return x;
  // Repulsion between axes (each point and its antipode).
  for (int it = 0; it < 2000; ++it) {
    std::vector<Eigen::Vector3d> force(n, Eigen::Vector3d::Zero());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        for (double sgn : {1.0, -1.0}) {
          const Eigen::Vector3d d = x[i] - sgn * x[j];
          const double r = std::max(d.norm(), 1e-9);
          force[i] += d / (r * r * r);
        }
      }
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::Vector3d f = force[i] - force[i].dot(x[i]) * x[i];
      x[i] = (x[i] + 0.01 * f / static_cast<double>(n)).normalized();
    }
  }
  for (auto& v : x)
    if (v.z() < 0 || (v.z() == 0 && v.x() < 0)) v = -v;
  return x;
}

double tensor_fa(const Eigen::Matrix3d& d) {
  const Eigen::Vector3d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(d).eigenvalues();
  const double md = ev.mean();
  return std::sqrt(1.5 * (ev.array() - md).square().sum() / ev.array().square().sum());
}

Eigen::Matrix3d region_tensor(int region_id, const PhantomSpec& spec) {
  if (region_id < 1 || region_id > spec.n_regions) throw DataError("region_tensor: bad region id");
  const auto axes = spread_axes(static_cast<std::size_t>(spec.n_regions));
  // Seeded rotation of the whole axis set keeps subjects distinct.
  Rng rng = make_stream(spec.seed, kTensor);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Quaterniond q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
  q.normalize();
  const Eigen::Vector3d e1 = q * axes[static_cast<std::size_t>(region_id - 1)];

  // FA spread over [0.3, 0.55]; prolate tensor with lambda2 = lambda3.
  const double fa = 0.3 + 0.25 * static_cast<double>(region_id - 1) / std::max(1, spec.n_regions - 1);
  const double k = fa * std::sqrt(3.0 / (9.0 - 6.0 * fa * fa));
  const double l1 = kMeanDiffusivity * (1.0 + 2.0 * k);
  const double l2 = kMeanDiffusivity * (1.0 - k);
  return l2 * Eigen::Matrix3d::Identity() + (l1 - l2) * e1 * e1.transpose();
}

DwiPhantom make_dwi(const PhantomSubject& subject, const PhantomSpec& spec) {
  spec.validate();
  const Geometry& fine = subject.truth.geometry();
  Geometry grid = fine;
  if (spec.dwi_downsample > 1) {
    const auto f = static_cast<double>(spec.dwi_downsample);
    Eigen::Matrix4d m = fine.affine.matrix();
    const Eigen::Vector3d origin =
        fine.affine.apply(Eigen::Vector3d::Constant(0.5 * (f - 1.0)));
    for (int a = 0; a < 3; ++a) {
      grid.dims[a] = std::max<std::size_t>(1, fine.dims[a] / spec.dwi_downsample);
      grid.spacing[a] = fine.spacing[a] * f;
      m.block<3, 1>(0, a) *= f;
    }
    m.topRightCorner<3, 1>() = origin;
    grid.affine = Affine(m);
    grid.validate();
  }

  DwiPhantom out;
  out.truth = resample_nearest(subject.truth, grid);
  out.mask = Mask::from_labels(out.truth);
  for (std::size_t i = 0; i < 3; ++i) {
    out.grads.directions.emplace_back(0.0, 0.0, 0.0);
    out.grads.bvals.push_back(0.0);
  }
  for (const auto& d : fibonacci_hemisphere(spec.n_directions)) {
    out.grads.directions.push_back(d);
    out.grads.bvals.push_back(spec.b_value);
  }
  for (int r = 1; r <= spec.n_regions; ++r) out.tensors.push_back(region_tensor(r, spec));

  const std::size_t nvol = out.grads.size();
  out.dwi = Volume(grid, nvol);
  out.dwi.set_ndim(4);
  Rng rng = make_stream(spec.seed, kDwiNoise);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double sigma = spec.noise_sigma * spec.s0;
  for (std::size_t t = 0; t < nvol; ++t) {
    const Eigen::Vector3d& g = out.grads.directions[t];
    const double b = out.grads.bvals[t];
    for (std::size_t lin = 0; lin < grid.num_voxels(); ++lin) {
      const LabelId id = out.truth.at(lin);
      double s = 0.0;
      if (id > 0) {
        const Eigen::Matrix3d& d = out.tensors[static_cast<std::size_t>(id - 1)];
        s = b < kB0Threshold ? spec.s0 : spec.s0 * std::exp(-b * g.dot(d * g));
      }
      if (sigma > 0) {
        const double re = s + sigma * gauss(rng);
        const double im = sigma * gauss(rng);
        s = std::hypot(re, im);
      }
      out.dwi.at(lin, t) = s;
    }
  }
  return out;
}

BoldPhantom make_bold(const PhantomSubject& subject, const PhantomSpec& spec) {
  spec.validate();
  const std::size_t t_len = spec.n_timepoints;
  if (t_len < 100) throw DataError("phantom: BOLD needs at least 100 timepoints");
  const auto n = static_cast<Eigen::Index>(spec.n_regions);
  const auto tn = static_cast<Eigen::Index>(t_len);

  // Band-limited latents: Gaussian-smoothed white noise, then Gram-Schmidt so
  // regions are mutually uncorrelated, each with unit variance.
  Rng rng = make_stream(spec.seed, kBoldLatent);
  std::normal_distribution<double> gauss(0.0, 1.0);
  constexpr double kSmoothFrames = 1.5;
  const int half = static_cast<int>(std::ceil(3 * kSmoothFrames));
  Eigen::MatrixXd latent(n, tn);
  for (Eigen::Index r = 0; r < n; ++r) {
    Eigen::VectorXd white(tn + 2 * half);
    for (Eigen::Index i = 0; i < white.size(); ++i) white[i] = gauss(rng);
    Eigen::VectorXd x(tn);
    for (Eigen::Index t = 0; t < tn; ++t) {
      double acc = 0, wsum = 0;
      for (int o = -half; o <= half; ++o) {
        const double w = std::exp(-0.5 * o * o / (kSmoothFrames * kSmoothFrames));
        acc += w * white[t + half + o];
        wsum += w;
      }
      x[t] = acc / wsum;
    }
    x.array() -= x.mean();
    for (Eigen::Index q = 0; q < r; ++q) {
      const Eigen::VectorXd prev = latent.row(q).transpose();
      x -= (x.dot(prev) / prev.squaredNorm()) * prev;
    }
    x /= std::sqrt(x.squaredNorm() / static_cast<double>(tn));
    latent.row(r) = x.transpose();
  }

  BoldPhantom out;
  out.latent = latent;
  out.stack.mask = subject.mask;
  out.stack.tr_seconds = spec.tr_seconds;
  const auto voxels = subject.mask.voxels();
  out.stack.series.resize(static_cast<Eigen::Index>(voxels.size()), tn);
  Rng noise_rng = make_stream(spec.seed, kBoldNoise);
  constexpr double kBaseline = 100.0;
  for (std::size_t v = 0; v < voxels.size(); ++v) {
    const LabelId id = subject.truth.at(voxels[v]);
    auto row = out.stack.series.row(static_cast<Eigen::Index>(v));
    row = latent.row(id - 1).array() + kBaseline;
    if (spec.noise_sigma > 0)
      for (Eigen::Index t = 0; t < tn; ++t) row[t] += spec.noise_sigma * gauss(noise_rng);
  }
  return out;
}

void inject_spike(TimeSeriesStack& stack, std::size_t frame, double offset) {
  if (frame >= stack.n_timepoints()) throw DataError("inject_spike: frame out of range");
  stack.series.col(static_cast<Eigen::Index>(frame)).array() += offset;
}

std::vector<AtlasPrior> make_priors(const PhantomSubject& subject, const PhantomSpec& spec,
                                    std::size_t n_priors, double jitter_mm) {
  if (n_priors < 1) throw DataError("make_priors: need at least one prior");
  if (!(jitter_mm >= 0)) throw DataError("make_priors: jitter must be >= 0");
  const Geometry& geom = subject.truth.geometry();
  std::vector<AtlasPrior> out;
  out.reserve(n_priors);
  for (std::size_t p = 0; p < n_priors; ++p) {
    Rng rng = make_stream(spec.seed, kPriorBase + p);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::Vector3d dir(gauss(rng), gauss(rng), gauss(rng));
    dir.normalize();
    const Eigen::Vector3d shift = jitter_mm * dir;

    // Same content, placed `shift` mm away.
    Geometry moved = geom;
    Eigen::Matrix4d m = geom.affine.matrix();
    m.topRightCorner<3, 1>() += shift;
    moved.affine = Affine(m);

    Volume src(moved, 1, std::vector<double>(subject.structural.data().begin(),
                                             subject.structural.data().end()));
    Volume img = trilinear_resample(src, geom);
    const double sigma = spec.noise_sigma * 100.0;
    if (sigma > 0)
      for (auto& v : img.data()) v += sigma * gauss(rng);
    LabelVolume lab_src(moved, std::vector<LabelId>(subject.truth.data().begin(), subject.truth.data().end()),
                        subject.truth.names());
    out.push_back({std::move(img), resample_nearest(lab_src, geom)});
  }
  return out;
}

}  // namespace parcelbench
