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

/// Agreement metrics and group summaries for label volumes on a common grid.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "parcelbench/volume.hpp"

namespace parcelbench {

struct OverlapCounts {
  std::size_t a = 0;     ///< voxels with the label in a
  std::size_t b = 0;     ///< voxels with the label in b
  std::size_t both = 0;  ///< voxels with the label in both
};

OverlapCounts overlap_counts(const LabelVolume& a, const LabelVolume& b, LabelId label);

/// 2|A n B| / (|A| + |B|); empty when both are empty.
std::optional<double> dice(const LabelVolume& a, const LabelVolume& b, LabelId label);
/// 1 - ||A| - |B|| / (|A| + |B|); empty when both are empty.
std::optional<double> vsi(const LabelVolume& a, const LabelVolume& b, LabelId label);
std::optional<double> dice(const OverlapCounts& c);
std::optional<double> vsi(const OverlapCounts& c);

struct PairScore {
  LabelId nucleus = 0;
  std::optional<double> dice;
  std::optional<double> vsi;
};

struct ProbabilityAtlas {
  std::size_t n_subjects = 0;
  /// Per nonzero label: fraction of subjects carrying it at each voxel.
  std::map<LabelId, Volume> frequency;
  /// Most frequent nonzero label where any subject labels the voxel (ties to
  /// the lower id), background elsewhere.
  LabelVolume max_prob;
};

ProbabilityAtlas probability_atlas(const std::vector<LabelVolume>& segs);

/// Unweighted mean world position of each nonempty label.
std::map<LabelId, Eigen::Vector3d> centroids(const LabelVolume& seg);

struct CentroidSpread {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  double rms_radius = 0.0;  ///< RMS distance of subject centroids to their mean
  std::size_t n_subjects = 0;
};

struct CentroidScatter {
  std::map<LabelId, CentroidSpread> labels;
  std::vector<std::string> warnings;
};

/// Labels found in fewer than two subjects are omitted with a warning.
CentroidScatter centroid_scatter(const std::vector<LabelVolume>& segs);

using LabelMapping = std::map<LabelId, LabelId>;

struct RegroupResult {
  LabelMapping mapping;  ///< source id -> reference id (0 when no overlap)
  std::vector<LabelVolume> regrouped;
};

/// Maps each source label to the reference label it overlaps most in the two
/// maximum-probability maps, then relabels every source segmentation.
RegroupResult regroup(const std::vector<LabelVolume>& sources, const std::vector<LabelVolume>& references);

LabelVolume apply_mapping(const LabelVolume& seg, const LabelMapping& mapping, const LabelDictionary& names);

/// Maximum-weight assignment of rows to columns; result[i] is the column of
/// row i or -1.
std::vector<int> hungarian_max(const Eigen::MatrixXd& weights);

struct LabelMatch {
  LabelMapping mapping;  ///< label in a -> label in b
  double total_dice = 0.0;
  std::vector<LabelId> unmatched_a;
  std::vector<LabelId> unmatched_b;
};

/// One-to-one pairing of labels maximizing summed Dice.
LabelMatch match_labels(const LabelVolume& a, const LabelVolume& b);

/// Summed matched Dice divided by the number of labels in b (the reference);
/// reference labels left unmatched count as zero.
double matched_mean_dice(const LabelVolume& a, const LabelVolume& b);

enum class Side { left, right };

struct ScoreRecord {
  std::string subject;
  Side side = Side::left;
  PairScore score;
  double reference_volume = 0.0;  ///< voxels of the nucleus in the reference
};

struct CellStat {
  std::optional<double> mean;
  std::optional<double> sd;  ///< sample sd, divisor n - 1
  std::size_t n = 0;
};

struct TableRow {
  std::string nucleus;
  LabelId id = 0;
  CellStat dice_l, dice_r, vsi_l, vsi_r;
  std::size_t n = 0;  ///< subjects contributing any score
  double mean_reference_volume = 0.0;
};

struct MetricsTable {
  std::vector<TableRow> rows;

  static const char* header();
  std::string to_csv(int precision = 2) const;
  void write_csv(const std::string& path, int precision = 2) const;
  /// Parses the CSV produced by to_csv (ids are not preserved).
  static MetricsTable parse_csv(const std::string& text);
};

/// Rows in descending order of mean reference volume (ties: lower id).
MetricsTable emit_table(const std::vector<ScoreRecord>& records, const LabelDictionary& names);

}  // namespace parcelbench
