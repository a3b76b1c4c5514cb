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

/// Cross-method study on a synthetic cohort: three parcellations per
/// subject, regrouping onto the structural labels, then agreement tables,
/// probability atlases and centroid scatter.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "parcelbench/cluster.hpp"
#include "parcelbench/fod.hpp"
#include "parcelbench/fusion.hpp"
#include "parcelbench/icp.hpp"
#include "parcelbench/metrics.hpp"
#include "parcelbench/phantom.hpp"

namespace parcelbench {

inline constexpr const char* kToolkitVersion = "1.0.0";
inline constexpr const char* kFormatVersion = "1";

struct StudyConfig {
  std::size_t n_subjects = 18;
  std::uint64_t seed = 0;
  std::string out_dir;  ///< empty: nothing is written

  /// Anatomy shared by all subjects; its noise_sigma is unused.
  PhantomSpec phantom;
  double structural_noise = 0.05;  ///< relative to the intensity range
  double dwi_noise = 0.02;         ///< fraction of S0
  double bold_noise = 0.2;         ///< relative to unit latent variance

  std::size_t n_priors = 20;
  double prior_jitter_mm = 1.0;
  FusionConfig fusion;

  FodConfig fod;
  KMeansConfig kmeans;
  double alpha = 100.0;

  PreprocConfig preproc;
  IcaConfig ica;
  /// ICA non-convergence aborts the fMRI path instead of warning.
  bool strict = false;

  void validate() const;
};

/// Study defaults sized for a desktop: 48^3 grid, 6 subjects, 200 restarts.
StudyConfig desk_scale_config();

/// Fills every key present in the JSON object, leaving the rest unchanged.
/// Unknown keys throw DataError.
void apply_json(StudyConfig& cfg, const std::string& json_text);
std::string to_json(const StudyConfig& cfg);

enum class Method { fusion, dti, fmri };
const char* method_name(Method m);
inline constexpr Method kMethods[] = {Method::fusion, Method::dti, Method::fmri};

struct SubjectOutcome {
  std::string id;
  std::uint64_t seed = 0;
  /// Final labels on the structural dictionary, per method; empty if failed.
  std::map<Method, std::optional<LabelVolume>> labels;
  /// Unregrouped clusters (dti) and components (fmri).
  std::map<Method, std::optional<LabelVolume>> raw;
  std::vector<std::string> diagnostics;
};

struct StudyResult {
  LabelVolume truth;
  std::vector<SubjectOutcome> subjects;
  std::map<Method, ProbabilityAtlas> atlases;
  std::map<Method, CentroidScatter> scatter;
  /// "dti_vs_fusion", "fmri_vs_fusion", "dti_vs_fmri", "<method>_vs_truth".
  std::map<std::string, MetricsTable> tables;
  /// Hungarian-matched mean Dice of each subject's raw parcellation vs truth.
  std::map<Method, std::vector<std::optional<double>>> matched_dice;
  std::string manifest;  ///< JSON text
  std::string manifest_hash;
};

StudyResult run_study(const StudyConfig& cfg);

/// Per-nucleus, per-hemisphere scores of `test` against `reference`. A
/// nucleus absent from `test` everywhere is scored as missing. Left is world
/// x < 0.
std::vector<ScoreRecord> score_sides(const std::string& subject, const LabelVolume& test,
                                     const LabelVolume& reference);

}  // namespace parcelbench
