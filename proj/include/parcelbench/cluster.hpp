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

/// Joint spatial/spectral k-means over an SH coefficient field.
///
/// Every masked voxel becomes the feature vector [p; alpha * c], p its world
/// position in mm and c its SH coefficients, so one Euclidean norm carries
/// both kinds of proximity. Seeds for the final run come from re-clustering
/// the pooled centroids of many randomly initialized runs.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "parcelbench/fod.hpp"
#include "parcelbench/volume.hpp"

namespace parcelbench {

struct FeatureSet {
  Eigen::MatrixXd points;            ///< (3 + n_coeffs) x n_voxels
  std::vector<std::size_t> voxels;   ///< linear index of each column
  Geometry geometry;
  double alpha = 100.0;

  std::size_t size() const { return voxels.size(); }
};

FeatureSet build_features(const ShField& field, double alpha = 100.0);

struct KMeansConfig {
  int k = 7;
  int n_restarts = 5000;
  int max_iter = 300;
  double tol = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;
};

struct KMeansResult {
  std::vector<int> assignment;
  Eigen::MatrixXd centroids;  ///< d x k
  double inertia = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Inertia after every assignment step; non-increasing.
  std::vector<double> inertia_trace;
};

/// Lloyd iterations from the given (distinct) initial centroids. An empty
/// cluster takes over the point farthest from its current centroid. Stops
/// when assignments repeat, when the relative centroid movement
/// ||dC||_F / ||C||_F drops below tol, or after max_iter updates. The
/// returned assignment is always nearest-centroid (lower index on ties)
/// with respect to the returned centroids.
KMeansResult kmeans_once(const Eigen::MatrixXd& points, const Eigen::MatrixXd& init, int max_iter,
                         double tol);

/// Nearest centroid per column of points, ties to the lower index.
std::vector<int> assign_nearest(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids);

/// Pools the centroids of cfg.n_restarts runs (uniformly drawn distinct
/// voxels as starts) and clusters that cloud with k-means, best of 10
/// random starts by inertia. Returns d x k seeds.
Eigen::MatrixXd seed_by_restarts(const Eigen::MatrixXd& points, const KMeansConfig& cfg);

/// Labels 1..k by descending cluster size (ties: lower centroid x first).
LabelVolume segment_dti(const ShField& field, const KMeansConfig& cfg, double alpha = 100.0,
                        Eigen::MatrixXd* final_centroids = nullptr);

void write_centroids_csv(const Eigen::MatrixXd& centroids, const std::string& path);

}  // namespace parcelbench
