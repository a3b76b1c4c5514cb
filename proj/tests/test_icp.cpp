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
#include <random>

#include "helpers.hpp"
#include "parcelbench/errors.hpp"
#include "parcelbench/icp.hpp"
#include "parcelbench/metrics.hpp"
#include "parcelbench/phantom.hpp"

using namespace parcelbench;

namespace {

TimeSeriesStack stack_of(const Eigen::MatrixXd& series, std::size_t nx = 0) {
  const auto v = static_cast<std::size_t>(series.rows());
  const Geometry g = Geometry::make({nx ? nx : v, nx ? v / nx : 1, 1}, {2, 2, 2});
  TimeSeriesStack s;
  s.mask = Mask(g);
  for (std::size_t i = 0; i < v; ++i) s.mask.set(i, true);
  s.series = series;
  return s;
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::VectorXd x = a.array() - a.mean(), y = b.array() - b.mean();
  return x.dot(y) / std::sqrt(x.squaredNorm() * y.squaredNorm());
}

// Sparse, symmetric, heavy-tailed spatial sources (K x V) and Gaussian
// courses (T x K).
void mixing_problem(int k, int v, int t, std::uint64_t seed, Eigen::MatrixXd& s, Eigen::MatrixXd& a) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> e(1.0);
  std::normal_distribution<double> g;
  std::bernoulli_distribution sign(0.5);
  s.resize(k, v);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < v; ++j) s(i, j) = (sign(rng) ? 1 : -1) * e(rng);
  a.resize(t, k);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < k; ++j) a(i, j) = g(rng);
}

}  // namespace

TEST_SUITE("icp") {

TEST_CASE("cosine drift basis holds every frequency below the cutoff") {
  const Eigen::MatrixXd b = dct_drift_basis(200, 0.7, 0.01);
  // k/(2*200*0.7) < 0.01  <=>  k < 2.8
  CHECK(b.cols() == 2);
  CHECK(b.rows() == 200);
  for (Eigen::Index c = 0; c < b.cols(); ++c) CHECK(std::abs(b.col(c).sum()) < 1e-9);
  CHECK(std::abs(b.col(0).dot(b.col(1))) < 1e-9);
}

TEST_CASE("a constant series leaves nothing after regression") {
  TimeSeriesStack s = stack_of(Eigen::MatrixXd::Constant(12, 80, 37.0), 4);
  const TimeSeriesStack out = preprocess(s, Eigen::MatrixXd(), PreprocConfig{});
  CHECK(out.n_timepoints() == 76);
  CHECK(out.series.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("linear drift over ten minutes is mostly removed") {
  const std::size_t t = 858;  // 600 s at 0.7 s
  Eigen::MatrixXd x(6, static_cast<Eigen::Index>(t));
  for (Eigen::Index i = 0; i < x.cols(); ++i) x.col(i).setConstant(0.05 * static_cast<double>(i));
  PreprocConfig cfg;
  cfg.fwhm_mm = 0;
  cfg.n_drop_initial = 0;
  const TimeSeriesStack out = preprocess(stack_of(x, 3), Eigen::MatrixXd(), cfg);
  const Eigen::VectorXd row = x.row(0).transpose();
  const double before = (row.array() - row.mean()).square().sum();
  CHECK(out.series.row(0).squaredNorm() < 0.01 * before);
}

TEST_CASE("an injected spike is detected alone and regressed out") {
  const Eigen::Index t = 120;
  Eigen::MatrixXd x(8, t);
  for (Eigen::Index r = 0; r < 8; ++r)
    for (Eigen::Index c = 0; c < t; ++c) x(r, c) = std::sin(0.3 * static_cast<double>(c) + static_cast<double>(r));
  TimeSeriesStack s = stack_of(x, 4);
  inject_spike(s, 50, 20.0);
  const auto spikes = detect_spikes(s.series);
  REQUIRE(spikes.size() == 1);
  CHECK(spikes[0] == 50);

  PreprocConfig cfg;
  cfg.fwhm_mm = 0;
  cfg.n_drop_initial = 0;
  cfg.highpass_hz = 0;
  PreprocReport rep;
  const TimeSeriesStack out = preprocess(s, Eigen::MatrixXd(), cfg, &rep);
  REQUIRE(rep.spike_frames.size() == 1);
  CHECK(rep.spike_frames[0] == 50);
  CHECK(out.series.col(50).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("nuisance with fewer rows than frames is rejected") {
  TimeSeriesStack s = stack_of(Eigen::MatrixXd::Random(4, 40), 2);
  CHECK_THROWS(preprocess(s, Eigen::MatrixXd::Random(13, 2), PreprocConfig{}));
}

TEST_CASE("unfolded series average to the Pearson correlation with the mean") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  Eigen::MatrixXd x(30, 90);
  for (auto i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  const TimeSeriesStack s = stack_of(x, 5);
  const TimeSeriesStack u = unfold(s);
  const Eigen::VectorXd m = x.colwise().mean().transpose();
  for (Eigen::Index r = 0; r < x.rows(); ++r) CHECK(u.series.row(r).mean() == doctest::Approx(pearson(x.row(r).transpose(), m)).epsilon(1e-9));
}

TEST_CASE("unfolding a voxel equal to the mean gives 1, its negation -1") {
  Eigen::MatrixXd x(3, 50);
  for (Eigen::Index c = 0; c < 50; ++c) {
    x(0, c) = std::cos(0.2 * static_cast<double>(c));
    x(1, c) = x(0, c);
    x(2, c) = x(0, c);
  }
  CHECK(unfold(stack_of(x)).series.row(0).mean() == doctest::Approx(1.0));
  Eigen::MatrixXd y = x;
  y.row(2) = -3.0 * x.row(0);
  y.row(1) = 5.0 * x.row(0);  // keeps the mean series aligned with row 0
  const TimeSeriesStack u = unfold(stack_of(y));
  CHECK(u.series.row(2).mean() == doctest::Approx(-1.0));
}

TEST_CASE("zero-variance voxels unfold to zero rows and are reported") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 30);
  x.row(2).setConstant(5.0);
  std::vector<std::size_t> zero;
  const TimeSeriesStack u = unfold(stack_of(x, 2), &zero);
  CHECK(u.series.row(2).isZero(0.0));
  REQUIRE(zero.size() == 1);
  CHECK(zero[0] == 2);
}

TEST_CASE("unfolding ignores per-voxel affine rescaling") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(6, 40);
  Eigen::MatrixXd y = x;
  // Same rescaling for every voxel so the mean series shifts accordingly.
  y = (3.0 * x).array() + 11.0;
  CHECK((unfold(stack_of(x)).series - unfold(stack_of(y)).series).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("standardize and zscore") {
  Eigen::VectorXd x(5);
  x << 1, 2, 3, 4, 10;
  const Eigen::VectorXd z = zscore(x);
  CHECK(z.mean() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(z.squaredNorm() / 5.0 == doctest::Approx(1.0));
  CHECK((zscore(z) - z).norm() < 1e-12);
  bool degenerate = false;
  CHECK(standardize(Eigen::VectorXd::Constant(4, 2.0), &degenerate).isZero(0.0));
  CHECK(degenerate);
}

TEST_CASE("group ICA separates two mixed sources") {
  Eigen::MatrixXd s, a;
  mixing_problem(2, 3000, 60, 21, s, a);
  IcaConfig cfg;
  cfg.n_components = 2;
  cfg.seed = 3;
  cfg.normalize_voxel_variance = false;
  const GroupIcaResult r = group_ica({stack_of((a * s).transpose(), 50)}, cfg);
  CHECK(r.converged);
  const Eigen::MatrixXd p = r.maps * s.transpose() * (s * s.transpose()).inverse();
  CHECK(amari_index(p) < 0.05);
}

TEST_CASE("group ICA maps are z-scored, right-skewed and mutually uncorrelated") {
  Eigen::MatrixXd s, a;
  mixing_problem(4, 4000, 80, 5, s, a);
  IcaConfig cfg;
  cfg.n_components = 4;
  const GroupIcaResult r = group_ica({stack_of((a * s).transpose(), 40)}, cfg);
  const double v = static_cast<double>(r.maps.cols());
  for (Eigen::Index i = 0; i < 4; ++i) {
    const Eigen::VectorXd m = r.maps.row(i).transpose();
    CHECK(std::abs(m.mean()) < 1e-9);
    CHECK(m.squaredNorm() / v == doctest::Approx(1.0));
    CHECK(m.array().cube().mean() >= 0);
    for (Eigen::Index j = i + 1; j < 4; ++j) CHECK(std::abs(pearson(m, r.maps.row(j).transpose())) < 1e-3);
  }
}

TEST_CASE("group ICA rejects more components than the data rank") {
  Eigen::MatrixXd s, a;
  mixing_problem(2, 500, 40, 1, s, a);
  IcaConfig cfg;
  cfg.n_components = 3;
  CHECK_THROWS_AS(group_ica({stack_of((a * s).transpose(), 50)}, cfg), DataError);
}

TEST_CASE("group ICA flags non-convergence") {
  Eigen::MatrixXd s, a;
  mixing_problem(4, 2000, 50, 2, s, a);
  IcaConfig cfg;
  cfg.n_components = 4;
  cfg.max_iter = 1;
  cfg.tol = 1e-14;
  CHECK_FALSE(group_ica({stack_of((a * s).transpose(), 50)}, cfg).converged);
}

TEST_CASE("dual regression recovers courses and maps of an exact mixture") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  Eigen::MatrixXd maps(3, 400), courses(70, 3);
  for (auto i = 0; i < maps.size(); ++i) maps.data()[i] = g(rng);
  for (auto i = 0; i < courses.size(); ++i) courses.data()[i] = g(rng);
  for (Eigen::Index k = 0; k < 3; ++k) maps.row(k).array() -= maps.row(k).mean();
  const TimeSeriesStack subj = stack_of((courses * maps).transpose(), 20);
  const DualRegressionResult r = dual_regression(subj, maps);
  CHECK((r.timecourses - courses).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((r.maps - maps).cwiseAbs().maxCoeff() < 1e-8);

  // Feeding the reconstruction back in changes nothing.
  const DualRegressionResult again = dual_regression(stack_of((r.timecourses * r.maps).transpose(), 20), r.maps);
  CHECK((again.maps - r.maps).cwiseAbs().maxCoeff() < 1e-8);

  // Noise of 1% keeps every course correlated above 0.999.
  Eigen::MatrixXd noisy = subj.series;
  for (auto i = 0; i < noisy.size(); ++i) noisy.data()[i] += 0.01 * g(rng);
  const DualRegressionResult rn = dual_regression(stack_of(noisy, 20), maps);
  for (Eigen::Index k = 0; k < 3; ++k) CHECK(pearson(rn.timecourses.col(k), courses.col(k)) > 0.999);
}

TEST_CASE("dual regression with one indicator map returns the region course") {
  Eigen::MatrixXd map = Eigen::MatrixXd::Zero(1, 50);
  map.leftCols(20).setOnes();
  Eigen::VectorXd course = Eigen::VectorXd::LinSpaced(30, -1.0, 2.0);
  course = course.array().sin();
  const DualRegressionResult r = dual_regression(stack_of((course * map).transpose(), 10), map);
  CHECK((r.timecourses.col(0) - course).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("all-zero data gives zero courses and maps") {
  Eigen::MatrixXd maps = Eigen::MatrixXd::Random(2, 30);
  const DualRegressionResult r = dual_regression(stack_of(Eigen::MatrixXd::Zero(30, 12), 10), maps);
  CHECK(r.timecourses.isZero(0.0));
  CHECK(r.maps.isZero(0.0));
}

TEST_CASE("hard parcellation picks the largest z-score, lower id on ties") {
  const TimeSeriesStack s = stack_of(Eigen::MatrixXd::Zero(6, 1), 3);
  Eigen::MatrixXd maps(2, 6);
  maps << 1, 1, 0, 0, 0, 0,   // indicator of voxels 0-1
      0, 0, 1, 1, 0, 0;       // indicator of voxels 2-3
  const LabelVolume l = hard_parcellate(maps, s.mask);
  CHECK(l.at(0) == 1);
  CHECK(l.at(1) == 1);
  CHECK(l.at(2) == 2);
  CHECK(l.at(3) == 2);
  CHECK(l.at(4) == 1);  // equal z-scores
  CHECK(l.at(5) == 1);
}

TEST_CASE("Amari index of permutations and mixtures") {
  Eigen::MatrixXd p(3, 3);
  p << 0, 2, 0, 0, 0, -1, 5, 0, 0;
  CHECK(amari_index(p) == doctest::Approx(0.0));
  CHECK(amari_index(Eigen::MatrixXd::Ones(3, 3)) == doctest::Approx(1.0));
}

TEST_CASE("four-region phantom without noise is parcellated") {
  PhantomSpec spec;
  spec.dims = {32, 32, 32};
  spec.n_regions = 4;
  spec.seed = 1;
  const PhantomSubject subj = make_truth(spec);
  std::vector<TimeSeriesStack> un;
  for (int i = 0; i < 3; ++i) {
    PhantomSpec si = spec;
    si.seed = 10 + static_cast<std::uint64_t>(i);
    un.push_back(unfold(preprocess(make_bold(subj, si).stack, Eigen::MatrixXd(), PreprocConfig{})));
  }
  IcaConfig cfg;
  cfg.n_components = 4;
  cfg.seed = 1;
  const GroupIcaResult g = group_ica(un, cfg);
  double sum = 0;
  for (const auto& u : un) sum += matched_mean_dice(hard_parcellate(dual_regression(u, g).maps, u.mask), subj.truth);
  CHECK(sum / 3.0 >= 0.9);
}

}  // TEST_SUITE
