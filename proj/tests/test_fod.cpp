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
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "parcelbench/errors.hpp"
#include "parcelbench/fod.hpp"

using namespace parcelbench;
using std::numbers::pi;

namespace {

Eigen::Vector3d polar(double theta, double phi) {
  return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)};
}

}  // namespace

TEST_SUITE("fod") {

TEST_CASE("basis layout: 28 coefficients over even degrees") {
  const ShBasis b(6);
  CHECK(b.n_coeffs() == 28);
  CHECK(ShBasis::index(0, 0) == 0);
  CHECK(ShBasis::index(2, -2) == 1);
  CHECK(ShBasis::index(2, 2) == 5);
  CHECK(ShBasis::index(6, 6) == 27);
  for (int j = 0; j < 28; ++j) CHECK(ShBasis::index(b.degree(j), b.azimuthal(j)) == j);
  CHECK_THROWS_AS(ShBasis(3), DataError);
}

TEST_CASE("basis values match closed-form real harmonics") {
  const ShBasis b(6);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> th(0.0, pi), ph(-pi, pi);
  for (int t = 0; t < 50; ++t) {
    const double theta = th(rng), phi = ph(rng);
    const double c = std::cos(theta), s = std::sin(theta);
    const Eigen::VectorXd y = b.evaluate(polar(theta, phi));
    CHECK(y[ShBasis::index(0, 0)] == doctest::Approx(0.5 / std::sqrt(pi)));
    CHECK(y[ShBasis::index(2, 0)] == doctest::Approx(std::sqrt(5.0 / (16 * pi)) * (3 * c * c - 1)));
    CHECK(y[ShBasis::index(2, 2)] == doctest::Approx(0.25 * std::sqrt(15.0 / pi) * s * s * std::cos(2 * phi)));
    CHECK(y[ShBasis::index(2, -2)] == doctest::Approx(0.25 * std::sqrt(15.0 / pi) * s * s * std::sin(2 * phi)));
    CHECK(y[ShBasis::index(4, 0)] ==
          doctest::Approx(3.0 / (16 * std::sqrt(pi)) * (35 * std::pow(c, 4) - 30 * c * c + 3)));
  }
}

TEST_CASE("basis is even: antipodal directions give equal values") {
  const ShBasis b(6);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  for (int t = 0; t < 20; ++t) {
    const Eigen::Vector3d u(g(rng), g(rng), g(rng));
    CHECK((b.evaluate(u) - b.evaluate(-u)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("basis is orthonormal under dense sphere quadrature") {
  const ShBasis b(6);
  const auto dirs = fibonacci_sphere(20000);
  const Eigen::MatrixXd B = sh_design_matrix(b, dirs);
  const Eigen::MatrixXd gram = (4 * pi / static_cast<double>(dirs.size())) * B.transpose() * B;
  CHECK((gram - Eigen::MatrixXd::Identity(28, 28)).cwiseAbs().maxCoeff() < 2e-3);
}

TEST_CASE("fibonacci hemisphere points are unit vectors with z > 0") {
  for (const auto& d : fibonacci_hemisphere(64)) {
    CHECK(d.norm() == doctest::Approx(1.0));
    CHECK(d.z() > 0);
  }
}

TEST_CASE("unregularized fit recovers every basis function from 64 directions") {
  const ShBasis b(6);
  const auto dirs = fibonacci_hemisphere(64);
  const Eigen::MatrixXd B = sh_design_matrix(b, dirs);
  const ShFitter fitter(b, dirs, 0.0);
  for (int j = 0; j < 28; ++j) {
    const Eigen::VectorXd c = fitter.fit(B.col(j));
    Eigen::VectorXd e = Eigen::VectorXd::Zero(28);
    e[j] = 1;
    CHECK((c - e).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("Laplace-Beltrami weight shrinks high degrees more than low ones") {
  const ShBasis b(6);
  const auto dirs = fibonacci_hemisphere(64);
  const Eigen::MatrixXd B = sh_design_matrix(b, dirs);
  const Eigen::VectorXd s = B.col(ShBasis::index(2, 0)) + B.col(ShBasis::index(6, 0));
  const Eigen::VectorXd c = fit_sh(s, dirs, b, 0.006);
  CHECK(c[ShBasis::index(2, 0)] > c[ShBasis::index(6, 0)]);
  CHECK(c[ShBasis::index(6, 0)] < 1.0);
  CHECK(std::abs(c[ShBasis::index(0, 0)]) < 1e-3);  // hemisphere sampling leaks a little
}

TEST_CASE("fewer directions than coefficients is an error") {
  CHECK_THROWS_AS(sh_design_matrix(ShBasis(6), fibonacci_hemisphere(27)), DataError);
}

TEST_CASE("Funk-Radon factors are 2 pi P_l(0)") {
  CHECK(funk_radon_factor(0) == 2.0 * pi * 1.0);
  CHECK(funk_radon_factor(2) == 2.0 * pi * -0.5);
  CHECK(funk_radon_factor(4) == 2.0 * pi * 0.375);
  CHECK(funk_radon_factor(6) == 2.0 * pi * -0.3125);
  for (int l : {0, 2, 4, 6}) CHECK(funk_radon_factor(l) == doctest::Approx(2.0 * pi * std::legendre(static_cast<unsigned>(l), 0.0)));
}

TEST_CASE("Funk-Radon coefficients equal great-circle integrals of the function") {
  // Independent check: integrate the SH function numerically along the great
  // circle perpendicular to v and compare with the transformed expansion at v.
  const ShBasis b(6);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  Eigen::VectorXd c(28);
  for (int j = 0; j < 28; ++j) c[j] = g(rng);
  const Eigen::VectorXd fc = funk_radon(c, b);
  for (int t = 0; t < 10; ++t) {
    const Eigen::Vector3d v = Eigen::Vector3d(g(rng), g(rng), g(rng)).normalized();
    const Eigen::Vector3d e1 = v.unitOrthogonal();
    const Eigen::Vector3d e2 = v.cross(e1);
    const int n = 2000;
    double integral = 0;
    for (int k = 0; k < n; ++k) {
      const double a = 2 * pi * k / n;
      integral += b.evaluate(std::cos(a) * e1 + std::sin(a) * e2).dot(c);
    }
    integral *= 2 * pi / n;
    CHECK(b.evaluate(v).dot(fc) == doctest::Approx(integral).epsilon(1e-9));
  }
}

TEST_CASE("gradient table text round trip with comments") {
  testing::TempDir dir("fod");
  {
    std::ofstream os(dir.file("g.txt"));
    os << "# gx gy gz b\n0 0 0 0\n\n";
    for (const auto& d : fibonacci_hemisphere(30)) os << d.x() << ' ' << d.y() << ' ' << d.z() << " 1000  # dw\n";
  }
  const GradientTable t = GradientTable::read(dir.file("g.txt"));
  CHECK(t.size() == 31);
  CHECK(t.b0_indices() == std::vector<std::size_t>{0});
  CHECK(t.dw_indices().size() == 30);
  t.write(dir.file("g2.txt"));
  const GradientTable t2 = GradientTable::read(dir.file("g2.txt"));
  REQUIRE(t2.size() == t.size());
  for (std::size_t i = 0; i < t.size(); ++i) CHECK((t2.directions[i] - t.directions[i]).norm() < 1e-12);
  {
    std::ofstream os(dir.file("bad.txt"));
    os << "0 0 1\n";
  }
  CHECK_THROWS_AS(GradientTable::read(dir.file("bad.txt")), DataError);
}

TEST_CASE("gradient table validation") {
  GradientTable t;
  for (const auto& d : fibonacci_hemisphere(28)) {
    t.directions.push_back(d);
    t.bvals.push_back(1000);
  }
  CHECK_NOTHROW(t.validate());
  t.directions[3] *= 2;
  CHECK_THROWS_AS(t.validate(), DataError);
  t.directions[3].normalize();
  t.bvals.pop_back();
  CHECK_THROWS_AS(t.validate(), DataError);
}

namespace {

struct SmallDwi {
  Volume dwi;
  GradientTable grads;
  Mask mask;
};

// Isotropic attenuation everywhere except voxel 0, which has no b=0 signal.
SmallDwi small_dwi() {
  SmallDwi s;
  const Geometry g = testing::cube(3);
  s.grads.directions.push_back(Eigen::Vector3d::Zero());
  s.grads.bvals.push_back(0);
  for (const auto& d : fibonacci_hemisphere(32)) {
    s.grads.directions.push_back(d);
    s.grads.bvals.push_back(1000);
  }
  s.dwi = Volume(g, s.grads.size());
  for (std::size_t v = 0; v < g.num_voxels(); ++v) {
    s.dwi.at(v, 0) = v == 0 ? 0.0 : 1000.0;
    for (std::size_t i = 1; i < s.grads.size(); ++i) s.dwi.at(v, i) = v == 0 ? 0.0 : 1000.0 * std::exp(-0.8);
  }
  s.mask = Mask(g);
  for (std::size_t v = 0; v < g.num_voxels(); ++v) s.mask.set(v, true);
  return s;
}

}  // namespace

TEST_CASE("field fit: isotropic signal has only the l = 0 term; dead voxels are skipped") {
  const SmallDwi s = small_dwi();
  FodConfig cfg;
  cfg.use_frt = false;
  const ShField f = fit_field(s.dwi, s.grads, s.mask, ShBasis(6), cfg);
  CHECK(f.skipped == std::vector<std::size_t>{0});
  CHECK(f.coeffs.row(0).cwiseAbs().maxCoeff() == 0.0);
  const double expected = std::exp(-0.8) * 2 * std::sqrt(pi);
  CHECK(f.coeffs(5, 0) == doctest::Approx(expected));
  CHECK(f.coeffs.row(5).tail(27).cwiseAbs().maxCoeff() < 1e-12);

  cfg.use_frt = true;
  const ShField g = fit_field(s.dwi, s.grads, s.mask, ShBasis(6), cfg);
  CHECK(g.coeffs(5, 0) == doctest::Approx(2 * pi * expected));
}

TEST_CASE("field fit rejects a gradient table of the wrong length") {
  SmallDwi s = small_dwi();
  s.grads.directions.pop_back();
  s.grads.bvals.pop_back();
  CHECK_THROWS_AS(fit_field(s.dwi, s.grads, s.mask), DataError);
}

TEST_CASE("upsampling keeps a constant field constant and covers the finer mask") {
  ShField f;
  const Geometry coarse = Geometry::make({4, 4, 4}, {2, 2, 2});
  f.mask = Mask(coarse);
  for (std::size_t v = 0; v < coarse.num_voxels(); ++v) f.mask.set(v, true);
  f.coeffs = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(coarse.num_voxels()), 28, 0.25);
  const Geometry fine = isotropic_geometry(coarse, 1.0);
  // Centres span 6 mm per axis, so 7 samples at 1 mm.
  CHECK(fine.dims == std::array<std::size_t, 3>{7, 7, 7});
  const ShField up = upsample_field(f, fine);
  CHECK(up.mask.count() == fine.num_voxels());
  CHECK((up.coeffs.array() - 0.25).abs().maxCoeff() < 1e-12);
}

TEST_CASE("SH field file round trip") {
  testing::TempDir dir("fod");
  const SmallDwi s = small_dwi();
  const ShField f = fit_field(s.dwi, s.grads, s.mask);
  write_sh_field(f, dir.file("sh.nii"), dir.file("mask.nii"));
  const ShField g = read_sh_field(dir.file("sh.nii"), dir.file("mask.nii"));
  CHECK(g.mask == f.mask);
  CHECK((g.coeffs - f.coeffs).cwiseAbs().maxCoeff() < 1e-5 * f.coeffs.cwiseAbs().maxCoeff());
}

}  // TEST_SUITE

TEST_SUITE("fod") {

TEST_CASE("Funk-Radon transform is linear") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n;
  Eigen::VectorXd c(28), d(28);
  for (int i = 0; i < 28; ++i) {
    c[i] = n(rng);
    d[i] = n(rng);
  }
  const Eigen::VectorXd lhs = funk_radon(2.5 * c + d), rhs = 2.5 * funk_radon(c) + funk_radon(d);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("field fit does not depend on the order of gradient entries") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  const Geometry g = testing::cube(2);
  GradientTable grads;
  for (int i = 0; i < 2; ++i) {
    grads.directions.push_back(Eigen::Vector3d::Zero());
    grads.bvals.push_back(0);
  }
  for (const auto& d : fibonacci_hemisphere(40)) {
    grads.directions.push_back(d);
    grads.bvals.push_back(1000);
  }
  Volume dwi(g, grads.size());
  for (std::size_t v = 0; v < g.num_voxels(); ++v)
    for (std::size_t i = 0; i < grads.size(); ++i) dwi.at(v, i) = 800.0 + 50.0 * n(rng);
  Mask m(g);
  for (std::size_t v = 0; v < g.num_voxels(); ++v) m.set(v, true);

  std::vector<std::size_t> perm(grads.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  GradientTable pg;
  Volume pdwi(g, grads.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    pg.directions.push_back(grads.directions[perm[i]]);
    pg.bvals.push_back(grads.bvals[perm[i]]);
    for (std::size_t v = 0; v < g.num_voxels(); ++v) pdwi.at(v, i) = dwi.at(v, perm[i]);
  }
  const ShField a = fit_field(dwi, grads, m), b = fit_field(pdwi, pg, m);
  CHECK((a.coeffs - b.coeffs).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("stronger Laplace-Beltrami weight never adds energy") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  const ShBasis b(6);
  const auto dirs = fibonacci_hemisphere(64);
  Eigen::VectorXd truth(28);
  for (int i = 0; i < 28; ++i) truth[i] = n(rng) / (1.0 + b.degree(i));
  const Eigen::VectorXd s = sh_design_matrix(b, dirs) * truth;
  auto energy = [&](const Eigen::VectorXd& c, bool low) {
    double e = 0;
    for (int i = 0; i < 28; ++i)
      if ((b.degree(i) == 0) == low) e += c[i] * c[i];
    return e;
  };
  double prev_low = 1e300, prev_high = 1e300;
  for (double lambda : {0.0, 0.001, 0.006, 0.03, 0.1, 1.0}) {
    const Eigen::VectorXd c = fit_sh(s, dirs, b, lambda);
    CHECK(energy(c, true) <= prev_low * (1 + 1e-9));
    CHECK(energy(c, false) <= prev_high * (1 + 1e-9));
    prev_low = energy(c, true);
    prev_high = energy(c, false);
  }
}

}  // TEST_SUITE
