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
#include "parcelbench/icp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "parcelbench/errors.hpp"
#include "parcelbench/parallel.hpp"
#include "parcelbench/random.hpp"

namespace parcelbench {

void TimeSeriesStack::validate() const {
  if (static_cast<std::size_t>(series.rows()) != mask.count())
    throw DataError("time series: row count does not match mask voxel count");
  if (series.cols() < 2) throw DataError("time series: need at least 2 frames");
  if (!(tr_seconds > 0)) throw DataError("time series: TR must be positive");
}

TimeSeriesStack TimeSeriesStack::from_volume(const Volume& v, const Mask& mask) {
  require_same_grid(v.geometry(), mask.geometry(), "time series");
  TimeSeriesStack s;
  s.mask = mask;
  if (v.time_step() > 0) s.tr_seconds = v.time_step();
  const auto voxels = mask.voxels();
  s.series.resize(static_cast<Eigen::Index>(voxels.size()), static_cast<Eigen::Index>(v.nt()));
  for (std::size_t t = 0; t < v.nt(); ++t)
    for (std::size_t r = 0; r < voxels.size(); ++r)
      s.series(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t)) = v.at(voxels[r], t);
  return s;
}

Volume TimeSeriesStack::to_volume() const {
  Volume v(mask.geometry(), n_timepoints());
  v.set_ndim(4);
  v.set_time_step(tr_seconds);
  const auto voxels = mask.voxels();
  for (std::size_t t = 0; t < n_timepoints(); ++t)
    for (std::size_t r = 0; r < voxels.size(); ++r)
      v.at(voxels[r], t) = series(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t));
  return v;
}

namespace {

std::vector<double> gaussian_kernel(double sigma_vox) {
  if (!(sigma_vox > 1e-6)) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma_vox));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  for (int i = -radius; i <= radius; ++i)
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma_vox * sigma_vox));
  return k;
}

// Separable convolution of a full grid with zero padding.
void convolve3(std::vector<double>& data, const std::array<std::size_t, 3>& dims,
               const std::array<std::vector<double>, 3>& kernels) {
  std::vector<double> tmp(data.size());
  const std::array<std::size_t, 3> stride{1, dims[0], dims[0] * dims[1]};
  for (int axis = 0; axis < 3; ++axis) {
    const auto& k = kernels[static_cast<std::size_t>(axis)];
    if (k.size() == 1) continue;
    const auto radius = static_cast<std::int64_t>(k.size() / 2);
    const auto n = static_cast<std::int64_t>(dims[static_cast<std::size_t>(axis)]);
    const std::size_t st = stride[static_cast<std::size_t>(axis)];
    for (std::size_t lin = 0; lin < data.size(); ++lin) {
      const auto pos = static_cast<std::int64_t>((lin / st) % static_cast<std::size_t>(n));
      double acc = 0.0;
      for (std::int64_t o = -radius; o <= radius; ++o) {
        const std::int64_t q = pos + o;
        if (q < 0 || q >= n) continue;
        acc += k[static_cast<std::size_t>(o + radius)] *
               data[static_cast<std::size_t>(static_cast<std::int64_t>(lin) + o * static_cast<std::int64_t>(st))];
      }
      tmp[lin] = acc;
    }
    data.swap(tmp);
  }
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Orthonormal basis of the column space of x (rank-revealing QR).
Eigen::MatrixXd column_space(const Eigen::MatrixXd& x, Eigen::Index* rank) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  *rank = qr.rank();
  Eigen::MatrixXd q = qr.householderQ();
  return q.leftCols(*rank);
}

}  // namespace

TimeSeriesStack smooth_in_mask(const TimeSeriesStack& s, double fwhm_mm) {
  if (!(fwhm_mm >= 0)) throw DataError("smoothing: FWHM must be >= 0");
  if (fwhm_mm == 0) return s;
  const Geometry& g = s.mask.geometry();
  const double sigma_mm = fwhm_mm / (2.0 * std::sqrt(2.0 * std::numbers::ln2));
  std::array<std::vector<double>, 3> kernels;
  for (int a = 0; a < 3; ++a) kernels[static_cast<std::size_t>(a)] = gaussian_kernel(sigma_mm / g.spacing[static_cast<std::size_t>(a)]);

  const auto voxels = s.mask.voxels();
  std::vector<double> weight(g.num_voxels(), 0.0);
  for (std::size_t lin : voxels) weight[lin] = 1.0;
  convolve3(weight, g.dims, kernels);

  TimeSeriesStack out = s;
  parallel_for(s.n_timepoints(), [&](std::size_t t) {
    std::vector<double> frame(g.num_voxels(), 0.0);
    for (std::size_t r = 0; r < voxels.size(); ++r)
      frame[voxels[r]] = s.series(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t));
    convolve3(frame, g.dims, kernels);
    for (std::size_t r = 0; r < voxels.size(); ++r)
      out.series(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t)) = frame[voxels[r]] / weight[voxels[r]];
  });
  return out;
}

Eigen::MatrixXd dct_drift_basis(std::size_t n_frames, double tr_seconds, double cutoff_hz) {
  const double duration = static_cast<double>(n_frames) * tr_seconds;
  std::vector<std::size_t> ks;
  for (std::size_t k = 1; k < n_frames; ++k) {
    if (static_cast<double>(k) / (2.0 * duration) >= cutoff_hz) break;
    ks.push_back(k);
  }
  Eigen::MatrixXd b(static_cast<Eigen::Index>(n_frames), static_cast<Eigen::Index>(ks.size()));
  const double norm = std::sqrt(2.0 / static_cast<double>(n_frames));
  for (std::size_t c = 0; c < ks.size(); ++c)
    for (std::size_t t = 0; t < n_frames; ++t)
      b(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) =
          norm * std::cos(std::numbers::pi * static_cast<double>(ks[c]) * (static_cast<double>(t) + 0.5) /
                          static_cast<double>(n_frames));
  return b;
}

std::vector<std::size_t> detect_spikes(const Eigen::MatrixXd& series, std::vector<double>* rms_out,
                                       double* threshold_out) {
  const Eigen::Index t_len = series.cols();
  if (t_len < 2) throw DataError("spike detection: need at least 2 frames");
  const Eigen::Index ref = t_len / 2;
  std::vector<double> rms(static_cast<std::size_t>(t_len));
  const double nvox = std::max<double>(1.0, static_cast<double>(series.rows()));
  for (Eigen::Index t = 0; t < t_len; ++t)
    rms[static_cast<std::size_t>(t)] = std::sqrt((series.col(t) - series.col(ref)).squaredNorm() / nvox);
  const double q1 = quantile(rms, 0.25);
  const double q3 = quantile(rms, 0.75);
  const double threshold = q3 + 1.5 * (q3 - q1);
  std::vector<std::size_t> spikes;
  for (std::size_t t = 0; t < rms.size(); ++t)
    if (rms[t] > threshold) spikes.push_back(t);
  if (rms_out) *rms_out = std::move(rms);
  if (threshold_out) *threshold_out = threshold;
  return spikes;
}

Eigen::MatrixXd read_regressor_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open regressor file " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue;
      }
      throw DataError(path + ": non-numeric regressor row");
    }
    first = false;
    if (!rows.empty() && row.size() != rows.front().size())
      throw DataError(path + ": ragged regressor rows");
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return m;
}

TimeSeriesStack preprocess(const TimeSeriesStack& raw, const Eigen::MatrixXd& nuisance,
                           const PreprocConfig& cfg, PreprocReport* report) {
  raw.validate();
  if (!(cfg.fwhm_mm >= 0) || !(cfg.highpass_hz >= 0)) throw DataError("preprocess: negative FWHM or cutoff");
  const std::size_t t_raw = raw.n_timepoints();
  const std::size_t n_drop = cfg.n_drop_initial;
  const auto n_reg = static_cast<std::size_t>(nuisance.cols());
  if (t_raw <= n_drop + n_reg)
    throw DataError("preprocess: " + std::to_string(t_raw) + " frames cannot support dropping " +
                    std::to_string(n_drop) + " and " + std::to_string(n_reg) + " regressors");
  const std::size_t t_len = t_raw - n_drop;

  Eigen::MatrixXd nuis(static_cast<Eigen::Index>(t_len), static_cast<Eigen::Index>(n_reg));
  if (n_reg > 0) {
    if (static_cast<std::size_t>(nuisance.rows()) == t_raw)
      nuis = nuisance.bottomRows(static_cast<Eigen::Index>(t_len));
    else if (static_cast<std::size_t>(nuisance.rows()) == t_len)
      nuis = nuisance;
    else
      throw DataError("preprocess: nuisance matrix has " + std::to_string(nuisance.rows()) + " rows, expected " +
                      std::to_string(t_raw) + " or " + std::to_string(t_len));
  }

  TimeSeriesStack s = raw;
  s.series = raw.series.rightCols(static_cast<Eigen::Index>(t_len));
  s = smooth_in_mask(s, cfg.fwhm_mm);

  const Eigen::MatrixXd drift = cfg.highpass_hz > 0 ? dct_drift_basis(t_len, s.tr_seconds, cfg.highpass_hz)
                                                     : Eigen::MatrixXd(static_cast<Eigen::Index>(t_len), 0);
  PreprocReport rep;
  rep.spike_frames = detect_spikes(s.series, &rep.rms, &rep.spike_threshold);
  rep.n_drift_regressors = static_cast<std::size_t>(drift.cols());

  const Eigen::Index p = 1 + drift.cols() + nuis.cols() + static_cast<Eigen::Index>(rep.spike_frames.size());
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(t_len), p);
  x.col(0).setOnes();
  x.middleCols(1, drift.cols()) = drift;
  x.middleCols(1 + drift.cols(), nuis.cols()) = nuis;
  for (std::size_t i = 0; i < rep.spike_frames.size(); ++i)
    x(static_cast<Eigen::Index>(rep.spike_frames[i]), 1 + drift.cols() + nuis.cols() + static_cast<Eigen::Index>(i)) = 1.0;

  Eigen::Index rank = 0;
  const Eigen::MatrixXd q = column_space(x, &rank);
  if (static_cast<std::size_t>(rank) >= t_len)
    throw DataError("preprocess: regressors leave no residual degrees of freedom");
  s.series -= (s.series * q) * q.transpose();
  if (report) *report = std::move(rep);
  return s;
}

Eigen::VectorXd standardize(const Eigen::VectorXd& x, bool* degenerate) {
  const double mean = x.mean();
  const Eigen::VectorXd c = x.array() - mean;
  const double sd = std::sqrt(c.squaredNorm() / static_cast<double>(x.size()));
  const bool flat = !(sd > 1e-12 * std::max(1.0, std::abs(mean)));
  if (degenerate) *degenerate = flat;
  if (flat) return Eigen::VectorXd::Zero(x.size());
  return c / sd;
}

TimeSeriesStack unfold(const TimeSeriesStack& stack, std::vector<std::size_t>* zero_variance) {
  if (stack.n_voxels() == 0) throw DataError("unfold: mask is empty");
  stack.validate();
  bool flat_mean = false;
  const Eigen::VectorXd m = standardize(stack.series.colwise().mean().transpose(), &flat_mean);
  TimeSeriesStack out = stack;
  const auto voxels = stack.mask.voxels();
  for (Eigen::Index r = 0; r < stack.series.rows(); ++r) {
    bool flat = false;
    const Eigen::VectorXd v = standardize(stack.series.row(r).transpose(), &flat);
    out.series.row(r) = (v.array() * m.array()).transpose();
    if ((flat || flat_mean) && zero_variance) zero_variance->push_back(voxels[static_cast<std::size_t>(r)]);
  }
  return out;
}

namespace {

Eigen::MatrixXd symmetric_decorrelation(const Eigen::MatrixXd& w) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w * w.transpose());
  const Eigen::VectorXd d = es.eigenvalues().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose() * w;
}

double skewness(const Eigen::VectorXd& x) {
  const Eigen::ArrayXd c = x.array() - x.mean();
  const double var = c.square().mean();
  return var > 0 ? c.cube().mean() / std::pow(var, 1.5) : 0.0;
}

}  // namespace

FastIcaResult fast_ica(const Eigen::MatrixXd& z, double tol, int max_iter, std::uint64_t seed) {
  const Eigen::Index k = z.rows();
  const auto n = static_cast<double>(z.cols());
  Rng rng = make_stream(seed, 0x1ca);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd w(k, k);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = gauss(rng);
  w = symmetric_decorrelation(w);

  FastIcaResult res;
  for (int it = 1; it <= max_iter; ++it) {
    const Eigen::MatrixXd g = (w * z).array().tanh().matrix();
    const Eigen::VectorXd dg = (1.0 - g.array().square()).rowwise().mean().matrix();
    Eigen::MatrixXd next = (g * z.transpose()) / n - dg.asDiagonal() * w;
    next = symmetric_decorrelation(next);
    const double lim = ((next * w.transpose()).diagonal().cwiseAbs().array() - 1.0).abs().maxCoeff();
    w = next;
    res.iterations = it;
    if (lim < tol) {
      res.converged = true;
      break;
    }
  }
  res.unmixing = w;
  res.sources = w * z;
  return res;
}

GroupIcaResult group_ica(const std::vector<TimeSeriesStack>& stacks, const IcaConfig& cfg) {
  if (stacks.empty()) throw DataError("group ICA: no subjects");
  if (cfg.n_components < 1) throw DataError("group ICA: need at least one component");
  const Mask& mask = stacks.front().mask;
  Eigen::Index total_t = 0;
  for (const auto& s : stacks) {
    s.validate();
    if (!(s.mask == mask)) throw DataError("group ICA: subjects do not share a mask");
    total_t += s.series.cols();
  }
  const auto k = static_cast<Eigen::Index>(cfg.n_components);
  if (total_t < k) throw DataError("group ICA: fewer concatenated frames than components");

  const Eigen::Index nvox = stacks.front().series.rows();
  Eigen::MatrixXd x(nvox, total_t);
  {
    Eigen::Index col = 0;
    for (const auto& s : stacks) {
      x.middleCols(col, s.series.cols()) = s.series;
      col += s.series.cols();
    }
  }
  // Temporal demeaning and, optionally, unit variance per voxel.
  x.colwise() -= x.rowwise().mean();
  if (cfg.normalize_voxel_variance) {
    for (Eigen::Index r = 0; r < nvox; ++r) {
      const double sd = std::sqrt(x.row(r).squaredNorm() / static_cast<double>(total_t));
      if (sd > 0) x.row(r) /= sd;
    }
  }

  // Principal subspace over the voxel dimension; rows of z are whitened
  // spatial patterns (unit second moment across voxels).
  Eigen::MatrixXd z;
  Eigen::VectorXd lambda;
  const double v = static_cast<double>(nvox);
  if (total_t <= nvox) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x.transpose() * x);
    lambda = es.eigenvalues().reverse();
    const Eigen::MatrixXd e = es.eigenvectors().rowwise().reverse().leftCols(k);
    if (lambda.size() < k || !(lambda[k - 1] > 1e-10 * lambda[0]))
      throw DataError("group ICA: data rank is below the requested component count");
    z = (lambda.head(k).cwiseSqrt().cwiseInverse() * std::sqrt(v)).asDiagonal() * (e.transpose() * x.transpose());
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x * x.transpose());
    lambda = es.eigenvalues().reverse();
    if (lambda.size() < k || !(lambda[k - 1] > 1e-10 * lambda[0]))
      throw DataError("group ICA: data rank is below the requested component count");
    z = std::sqrt(v) * es.eigenvectors().rowwise().reverse().leftCols(k).transpose();
  }

  const FastIcaResult ica = fast_ica(z, cfg.tol, cfg.max_iter, cfg.seed);
  GroupIcaResult out;
  out.mask = mask;
  out.eigenvalues = lambda.head(k) / v;
  out.unmixing = ica.unmixing;
  out.iterations = ica.iterations;
  out.converged = ica.converged;
  out.maps.resize(k, nvox);
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::VectorXd m = zscore(ica.sources.row(c).transpose());
    if (skewness(m) < 0) m = -m;
    out.maps.row(c) = m.transpose();
  }
  return out;
}

DualRegressionResult dual_regression(const TimeSeriesStack& subject, const Eigen::MatrixXd& group_maps) {
  subject.validate();
  const Eigen::Index nvox = subject.series.rows();
  const Eigen::Index t_len = subject.series.cols();
  const Eigen::Index k = group_maps.rows();
  if (group_maps.cols() != nvox) throw DataError("dual regression: map and subject grids differ");

  Eigen::MatrixXd spatial(nvox, k + 1);
  spatial.col(0).setOnes();
  spatial.rightCols(k) = group_maps.transpose();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr1(spatial);
  qr1.setThreshold(1e-10);
  if (qr1.rank() < k + 1) throw NumericalError("dual regression: group maps are collinear");
  const Eigen::MatrixXd beta1 = qr1.solve(subject.series);  // (k+1) x T

  DualRegressionResult res;
  res.timecourses = beta1.bottomRows(k).transpose();

  Eigen::MatrixXd temporal(t_len, k + 1);
  temporal.col(0).setOnes();
  temporal.rightCols(k) = res.timecourses;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr2(temporal);
  qr2.setThreshold(1e-10);
  if (qr2.rank() < k + 1) {
    // All-zero data gives all-zero courses; report zero maps rather than fail.
    if (subject.series.isZero(0.0)) {
      res.maps = Eigen::MatrixXd::Zero(k, nvox);
      return res;
    }
    throw NumericalError("dual regression: subject time courses are collinear");
  }
  const Eigen::MatrixXd beta2 = qr2.solve(subject.series.transpose());  // (k+1) x V
  res.maps = beta2.bottomRows(k);
  return res;
}

DualRegressionResult dual_regression(const TimeSeriesStack& subject, const GroupIcaResult& group) {
  if (!(subject.mask == group.mask)) throw DataError("dual regression: subject and group masks differ");
  return dual_regression(subject, group.maps);
}

Eigen::VectorXd zscore(const Eigen::VectorXd& x) { return standardize(x); }

LabelVolume hard_parcellate(const Eigen::MatrixXd& maps, const Mask& mask) {
  const Eigen::Index k = maps.rows();
  if (k < 1) throw DataError("hard parcellation: need at least one map");
  const auto voxels = mask.voxels();
  if (static_cast<std::size_t>(maps.cols()) != voxels.size())
    throw DataError("hard parcellation: map length does not match mask");
  Eigen::MatrixXd z(k, maps.cols());
  for (Eigen::Index c = 0; c < k; ++c) z.row(c) = zscore(maps.row(c).transpose()).transpose();
  LabelVolume out(mask.geometry(), numeric_dictionary(static_cast<LabelId>(k), "C"));
  for (std::size_t r = 0; r < voxels.size(); ++r) {
    Eigen::Index best = 0;
    z.col(static_cast<Eigen::Index>(r)).maxCoeff(&best);  // first maximum
    out.at(voxels[r]) = static_cast<LabelId>(best + 1);
  }
  return out;
}

double amari_index(const Eigen::MatrixXd& p) {
  const Eigen::Index k = p.rows();
  if (k != p.cols() || k < 2) throw DataError("Amari index needs a square matrix of size >= 2");
  const Eigen::MatrixXd a = p.cwiseAbs();
  double rows = 0, cols = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    rows += a.row(i).sum() / a.row(i).maxCoeff() - 1.0;
    cols += a.col(i).sum() / a.col(i).maxCoeff() - 1.0;
  }
  return (rows + cols) / (2.0 * static_cast<double>(k) * static_cast<double>(k - 1));
}

}  // namespace parcelbench
