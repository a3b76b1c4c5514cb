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

#include <fstream>
#include <sstream>
#include <vector>

#include "helpers.hpp"
#include "parcelbench/cli.hpp"
#include "parcelbench/hash.hpp"
#include "parcelbench/nifti.hpp"

using namespace parcelbench;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "parcelbench");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = parse_and_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write_text(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("version and help exit cleanly") {
  const Run v = cli({"--version"});
  CHECK(v.code == 0);
  CHECK(v.out.find("parcelbench 1.0.0") != std::string::npos);
  CHECK(cli({"metrics", "--help"}).code == 0);
}

TEST_CASE("usage errors exit with 1") {
  CHECK(cli({}).code == 1);
  CHECK(cli({"no-such-command"}).code == 1);
  CHECK(cli({"phantom", "--regions", "x", "--out", "/tmp/x"}).code == 1);
  CHECK(cli({"phantom"}).code == 1);  // --out missing
}

TEST_CASE("metrics prints Dice and VSI") {
  testing::TempDir dir("cli_metrics");
  const Geometry g = Geometry::make({4, 1, 1}, {1, 1, 1});
  write_nifti(LabelVolume(g, {1, 1, 0, 0}, numeric_dictionary(1)), dir.file("a.nii"));
  write_nifti(LabelVolume(g, {1, 0, 0, 0}, numeric_dictionary(1)), dir.file("b.nii"));
  const Run r = cli({"metrics", dir.file("a.nii"), dir.file("b.nii"), "--label", "1"});
  CHECK(r.code == 0);
  CHECK(r.out == "dice=0.666667,vsi=0.666667\n");
  const Run all = cli({"metrics", dir.file("a.nii"), dir.file("b.nii")});
  CHECK(all.out.rfind("label=1,dice=", 0) == 0);
}

TEST_CASE("unreadable data exits with 2") {
  testing::TempDir dir("cli_bad");
  write_text(dir.file("junk.nii"), "not a nifti file");
  CHECK(cli({"metrics", dir.file("junk.nii"), dir.file("junk.nii")}).code == 2);
}

TEST_CASE("config files supply flags and unknown keys are rejected") {
  testing::TempDir dir("cli_cfg");
  write_text(dir.file("ok.json"), R"({"regions": 4, "dims": 16, "modalities": ["structural"]})");
  const Run ok = cli({"phantom", "--config", dir.file("ok.json"), "--out", dir.file("ph")});
  REQUIRE(ok.code == 0);
  const LabelVolume truth = read_label_nifti(dir.file("ph/truth.nii"), LabelScheme::numeric);
  CHECK(truth.geometry().dims[0] == 16);
  CHECK(truth.present_labels().size() == 4);
  // Command-line values win over the file.
  REQUIRE(cli({"phantom", "--config", dir.file("ok.json"), "--regions", "5", "--out", dir.file("ph5")}).code == 0);
  CHECK(read_label_nifti(dir.file("ph5/truth.nii"), LabelScheme::numeric).present_labels().size() == 5);
  write_text(dir.file("bad.json"), R"({"regoins": 4})");
  CHECK(cli({"phantom", "--config", dir.file("bad.json"), "--out", dir.file("ph")}).code == 1);
}

TEST_CASE("ODF fitting is byte-identical on rerun and leaves inputs untouched") {
  testing::TempDir dir("cli_fod");
  REQUIRE(cli({"phantom", "--regions", "4", "--dims", "12", "--directions", "30", "--modalities", "dwi", "--seed", "2",
               "--out", dir.file("ph")})
              .code == 0);
  const std::string dwi = dir.file("ph/dwi.nii");
  const std::string before = sha256_file(dwi);
  const std::vector<std::string> args{"fod-fit", dwi, dir.file("ph/grads.txt"), dir.file("ph/dwi_mask.nii")};
  auto with_out = [&](const std::string& o) {
    auto a = args;
    a.insert(a.end(), {"--out", o});
    return a;
  };
  REQUIRE(cli(with_out(dir.file("a.nii"))).code == 0);
  REQUIRE(cli(with_out(dir.file("b.nii"))).code == 0);
  CHECK(sha256_file(dir.file("a.nii")) == sha256_file(dir.file("b.nii")));
  CHECK(sha256_file(dir.file("a_mask.nii")) == sha256_file(dir.file("b_mask.nii")));
  CHECK(sha256_file(dwi) == before);

  REQUIRE(cli({"dti-seg", dir.file("a.nii"), dir.file("a_mask.nii"), "--k", "4", "--restarts", "5", "--out",
               dir.file("seg.nii")})
              .code == 0);
  CHECK(read_label_nifti(dir.file("seg.nii"), LabelScheme::numeric).present_labels().size() == 4);
}

TEST_CASE("the seed alone determines a stochastic command's output") {
  testing::TempDir dir("cli_seed");
  auto run = [&](const std::string& seed, const std::string& out) {
    return cli({"phantom", "--regions", "4", "--dims", "12", "--noise", "0.05", "--modalities", "structural", "--seed",
                seed, "--out", dir.file(out)})
        .code;
  };
  REQUIRE(run("9", "a") == 0);
  REQUIRE(run("9", "b") == 0);
  REQUIRE(run("10", "c") == 0);
  CHECK(sha256_file(dir.file("a/structural.nii")) == sha256_file(dir.file("b/structural.nii")));
  CHECK(sha256_file(dir.file("a/structural.nii")) != sha256_file(dir.file("c/structural.nii")));
}

TEST_CASE("study runs from a config file") {
  testing::TempDir dir("cli_study");
  write_text(dir.file("s.json"), R"({"n_subjects": 2, "seed": 4, "phantom": {"dims": 20, "n_regions": 7, "n_timepoints": 100},
                                      "fusion": {"n_priors": 3}, "dti": {"n_restarts": 5}, "fmri": {"n_components": 7}})");
  const Run r = cli({"study", "--config", dir.file("s.json"), "--out", dir.file("out")});
  CHECK(r.code == 0);
  CHECK(r.err.find("study: manifest ") != std::string::npos);
  CHECK(std::filesystem::exists(dir.path() / "out/manifest.json"));
  write_text(dir.file("bad.json"), R"({"subjects": 2})");
  CHECK(cli({"study", "--config", dir.file("bad.json"), "--out", dir.file("out2")}).code == 2);
}

}  // TEST_SUITE
