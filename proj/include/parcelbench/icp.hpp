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

/// Resting-state parcellation by instantaneous connectivity: preprocessing,
/// unfolding, group spatial ICA over temporally concatenated subjects, dual
/// regression and hard assignment.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "parcelbench/volume.hpp"

namespace parcelbench {

/// Time courses of the voxels inside a mask. Row r of `series` belongs to the
/// r-th on-voxel of the mask (ascending linear index); columns are frames.
struct TimeSeriesStack {
  Mask mask;
  Eigen::MatrixXd series;
  double tr_seconds = 0.7;

  std::size_t n_voxels() const { return static_cast<std::size_t>(series.rows()); }
  std::size_t n_timepoints() const { return static_cast<std::size_t>(series.cols()); }
  void validate() const;

  static TimeSeriesStack from_volume(const Volume& v, const Mask& mask);
  Volume to_volume() const;
};

struct PreprocConfig {
  double fwhm_mm = 3.5;
  double highpass_hz = 0.01;
  std::size_t n_drop_initial = 4;
};

struct PreprocReport {
  std::vector<std::size_t> spike_frames;  ///< indices after the initial drop
  std::vector<double> rms;                ///< RMS difference to the reference frame
  double spike_threshold = 0.0;
  std::size_t n_drift_regressors = 0;     ///< cosine terms, intercept excluded
};

/// Drop initial frames, smooth in space, then regress out [intercept |
/// cosine drift | nuisance | spike indicators] jointly and return residuals.
/// `nuisance` may have the raw frame count or the post-drop count of rows, or
/// zero columns.
TimeSeriesStack preprocess(const TimeSeriesStack& raw, const Eigen::MatrixXd& nuisance,
                           const PreprocConfig& cfg, PreprocReport* report = nullptr);

/// Gaussian smoothing restricted to the mask (normalized convolution).
/// FWHM is converted per axis to sigma = FWHM / (2 sqrt(2 ln 2)) / spacing.
TimeSeriesStack smooth_in_mask(const TimeSeriesStack& s, double fwhm_mm);

/// Cosine drift basis (T x K) with every frequency k/(2 T tr) below cutoff_hz,
/// k >= 1. The intercept is not included.
Eigen::MatrixXd dct_drift_basis(std::size_t n_frames, double tr_seconds, double cutoff_hz);

/// Frames whose RMS difference to the mid-point frame strictly exceeds
/// Q3 + 1.5 IQR of the RMS series (linear-interpolated quartiles).
std::vector<std::size_t> detect_spikes(const Eigen::MatrixXd& series, std::vector<double>* rms = nullptr,
                                       double* threshold = nullptr);

/// Plain CSV of regressors, one row per frame; a non-numeric first row is a
/// header.
Eigen::MatrixXd read_regressor_csv(const std::string& path);

/// Zero mean, unit variance with divisor n. Constant input gives zeros.
Eigen::VectorXd standardize(const Eigen::VectorXd& x, bool* degenerate = nullptr);

/// Element-wise product of each standardized voxel series with the
/// standardized mask-mean series. Voxels (or a mean series) without variance
/// give zero rows; their linear indices are appended to `zero_variance`.
TimeSeriesStack unfold(const TimeSeriesStack& stack, std::vector<std::size_t>* zero_variance = nullptr);

struct IcaConfig {
  std::size_t n_components = 30;
  double tol = 1e-6;
  int max_iter = 500;
  std::uint64_t seed = 0;
  bool normalize_voxel_variance = true;
};

struct FastIcaResult {
  Eigen::MatrixXd unmixing;  ///< K x K, rows orthonormal
  Eigen::MatrixXd sources;   ///< K x N
  int iterations = 0;
  bool converged = false;
};

/// Symmetric fixed-point ICA with g = tanh on whitened rows (K x N).
FastIcaResult fast_ica(const Eigen::MatrixXd& whitened, double tol, int max_iter, std::uint64_t seed);

struct GroupIcaResult {
  Mask mask;
  /// K x V, each map z-scored across voxels with non-negative skewness.
  Eigen::MatrixXd maps;
  Eigen::VectorXd eigenvalues;  ///< retained principal variances
  Eigen::MatrixXd unmixing;
  int iterations = 0;
  bool converged = false;

  std::size_t n_components() const { return static_cast<std::size_t>(maps.rows()); }
};

GroupIcaResult group_ica(const std::vector<TimeSeriesStack>& stacks, const IcaConfig& cfg);

struct DualRegressionResult {
  Eigen::MatrixXd timecourses;  ///< T x K
  Eigen::MatrixXd maps;         ///< K x V
};

/// Spatial regression of every frame on the maps (+ intercept), then temporal
/// regression of every voxel on the resulting courses (+ intercept).
DualRegressionResult dual_regression(const TimeSeriesStack& subject, const Eigen::MatrixXd& group_maps);
DualRegressionResult dual_regression(const TimeSeriesStack& subject, const GroupIcaResult& group);

Eigen::VectorXd zscore(const Eigen::VectorXd& x);

/// Argmax of the z-scored maps at every masked voxel, ids 1..K, ties to the
/// lower id.
LabelVolume hard_parcellate(const Eigen::MatrixXd& maps, const Mask& mask);

/// Amari distance of a square matrix from a scaled permutation, in [0, 1].
double amari_index(const Eigen::MatrixXd& p);

}  // namespace parcelbench
