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

#include <cstdlib>
#include <filesystem>

#include "helpers.hpp"
#include "parcelbench/errors.hpp"
#include "parcelbench/hash.hpp"
#include "parcelbench/pipeline.hpp"

using namespace parcelbench;

namespace {

StudyConfig tiny_config() {
  StudyConfig cfg;
  apply_json(cfg, R"({"n_subjects": 2, "seed": 3, "phantom": {"dims": 20, "n_regions": 7, "n_timepoints": 100},
                      "fusion": {"n_priors": 3}, "dti": {"k": 7, "n_restarts": 5}, "fmri": {"n_components": 7}})");
  return cfg;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("JSON config fills the named fields and rejects unknown keys") {
  StudyConfig cfg;
  apply_json(cfg, R"({"n_subjects": 4, "phantom": {"dims": [20, 22, 24]}, "noise": {"bold": 0.5}})");
  CHECK(cfg.n_subjects == 4);
  CHECK(cfg.phantom.dims == std::array<std::size_t, 3>{20, 22, 24});
  CHECK(cfg.bold_noise == 0.5);
  CHECK(cfg.n_priors == 20);  // untouched
  CHECK_THROWS_AS(apply_json(cfg, R"({"n_subject": 4})"), DataError);
  CHECK_THROWS_AS(apply_json(cfg, R"({"dti": {"restarts": 4}})"), DataError);

  StudyConfig back;
  apply_json(back, to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
}

TEST_CASE("hemisphere scores and the missing-nucleus convention") {
  // x world coordinates of a 4-voxel row centred on 0: -1.5, -0.5, 0.5, 1.5.
  const Geometry g = Geometry::make({4, 1, 1}, {1, 1, 1}, Eigen::Vector3d(-1.5, 0, 0));
  const LabelVolume ref(g, {1, 1, 1, 2}, numeric_dictionary(2));
  const LabelVolume test(g, {1, 0, 1, 1}, numeric_dictionary(2));
  const auto rec = score_sides("s", test, ref);
  REQUIRE(rec.size() == 4);
  for (const auto& r : rec) {
    if (r.score.nucleus == 1 && r.side == Side::left) {
      CHECK(*r.score.dice == doctest::Approx(2.0 / 3.0));
      CHECK(r.reference_volume == 2);
    }
    if (r.score.nucleus == 1 && r.side == Side::right) CHECK(*r.score.dice == doctest::Approx(2.0 / 3.0));
    if (r.score.nucleus == 2) CHECK_FALSE(r.score.dice.has_value());  // absent from test
  }
}

TEST_CASE("noise-free fusion with exact priors reproduces the truth") {
  StudyConfig cfg = tiny_config();
  cfg.n_subjects = 1;
  cfg.structural_noise = 0;
  cfg.dwi_noise = 0;
  cfg.prior_jitter_mm = 0;
  const StudyResult r = run_study(cfg);
  REQUIRE(r.subjects.size() == 1);
  REQUIRE(r.subjects[0].labels.at(Method::fusion).has_value());
  CHECK(*r.subjects[0].labels.at(Method::fusion) == r.truth);
  const auto& t = r.tables.at("fusion_vs_truth");
  std::size_t scored = 0;
  for (const auto& row : t.rows) {
    // Dictionary names beyond the 7 regions stay empty; a region may sit in
    // one hemisphere only.
    if (!row.dice_l.mean && !row.dice_r.mean) continue;
    ++scored;
    for (const CellStat* c : {&row.dice_l, &row.dice_r})
      if (c->mean) CHECK(*c->mean == doctest::Approx(1.0));
  }
  CHECK(scored == 7);
}

TEST_CASE("studies are reproducible across runs and thread counts") {
  const StudyConfig cfg = tiny_config();
  const char* old = std::getenv("PARCELBENCH_THREADS");
  const std::string saved = old ? old : "";
  ::setenv("PARCELBENCH_THREADS", "1", 1);
  const StudyResult a = run_study(cfg);
  ::setenv("PARCELBENCH_THREADS", "3", 1);
  const StudyResult b = run_study(cfg);
  if (old) ::setenv("PARCELBENCH_THREADS", saved.c_str(), 1);
  else ::unsetenv("PARCELBENCH_THREADS");
  CHECK(a.manifest_hash == b.manifest_hash);
  CHECK(a.manifest_hash == sha256_hex(a.manifest));
  CHECK(a.tables.size() == 6);
  // Clustering and ICA labels partition the thalamus mask; fusion may leave
  // voxels where every shifted prior says background, but never labels
  // outside the mask.
  for (const auto& subj : a.subjects)
    for (Method m : kMethods) {
      REQUIRE(subj.labels.at(m).has_value());
      const LabelVolume& l = *subj.labels.at(m);
      REQUIRE(l.geometry() == a.truth.geometry());
      std::size_t holes = 0, spill = 0;
      for (std::size_t i = 0; i < l.data().size(); ++i) {
        holes += l.at(i) == 0 && a.truth.at(i) != 0;
        spill += l.at(i) != 0 && a.truth.at(i) == 0;
      }
      INFO(std::string(method_name(m)));
      if (m != Method::fusion) CHECK(holes == 0);
      CHECK(spill == 0);
    }
  for (Method m : kMethods) CHECK(a.matched_dice.at(m).size() == 2);
}

TEST_CASE("written outputs carry hashes in the manifest") {
  testing::TempDir dir("study");
  StudyConfig cfg = tiny_config();
  cfg.out_dir = dir.path().string();
  const StudyResult r = run_study(cfg);
  for (const char* f : {"manifest.json", "tables/dti_vs_fusion.csv", "atlases/truth.nii",
                        "atlases/fmri/probability.png", "sub-01/dti/labels.nii", "sub-02/fmri/components.nii"})
    CHECK_MESSAGE(std::filesystem::exists(dir.path() / f), f);
  CHECK(r.manifest.find(sha256_file(dir.file("sub-01/fusion/labels.nii"))) != std::string::npos);
}

TEST_CASE("invalid study settings") {
  StudyConfig cfg = tiny_config();
  cfg.n_subjects = 0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
}

}  // TEST_SUITE
