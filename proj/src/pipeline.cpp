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
#include "parcelbench/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "parcelbench/errors.hpp"
#include "parcelbench/hash.hpp"
#include "parcelbench/nifti.hpp"
#include "parcelbench/parallel.hpp"
#include "parcelbench/random.hpp"
#include "parcelbench/render.hpp"

namespace parcelbench {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Seed stream ids under the master seed.
constexpr std::uint64_t kAnatomyStream = 0xA7A7;
constexpr std::uint64_t kIcaStream = 0x1CA;
// Under each subject seed.
constexpr std::uint64_t kStructuralNoiseStream = 7;
constexpr std::uint64_t kKMeansStream = 0xD71;

template <class T>
void read_into(const json& j, T& dst) {
  dst = j.get<T>();
}

using Setter = std::function<void(const json&)>;

void apply_section(const json& obj, const std::string& section, const std::map<std::string, Setter>& setters) {
  if (!obj.is_object()) throw DataError("config: '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    auto it = setters.find(key);
    if (it == setters.end())
      throw DataError("config: unknown key '" + (section.empty() ? key : section + "." + key) + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw DataError("config: bad value for '" + key + "': " + e.what());
    }
  }
}

std::string subject_id(std::size_t i) {
  std::ostringstream os;
  os << "sub-" << std::setw(2) << std::setfill('0') << (i + 1);
  return os.str();
}

std::string hash_labels(const LabelVolume& v) {
  const auto d = v.data();
  return sha256_hex({reinterpret_cast<const char*>(d.data()), d.size_bytes()});
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw DataError("cannot create " + p.string());
  os << text;
}

std::string centroid_csv(const CentroidScatter& s, const LabelDictionary& names) {
  std::ostringstream os;
  os << "label,name,n_subjects,mean_x,mean_y,mean_z,rms_radius\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& [id, c] : s.labels) {
    auto it = names.find(id);
    os << id << ',' << (it == names.end() ? std::to_string(id) : it->second) << ',' << c.n_subjects << ','
       << c.mean.x() << ',' << c.mean.y() << ',' << c.mean.z() << ',' << c.rms_radius << '\n';
  }
  return os.str();
}

}  // namespace

void StudyConfig::validate() const {
  if (n_subjects < 1) throw DataError("study: n_subjects must be >= 1");
  if (n_priors < 1) throw DataError("study: n_priors must be >= 1");
  if (!(prior_jitter_mm >= 0)) throw DataError("study: prior jitter must be >= 0");
  if (!(structural_noise >= 0 && dwi_noise >= 0 && bold_noise >= 0))
    throw DataError("study: noise levels must be >= 0");
  if (!(alpha > 0)) throw DataError("study: alpha must be positive");
  if (ica.n_components < 1) throw DataError("study: n_components must be >= 1");
  phantom.validate();
  fusion.validate();
  kmeans.validate();
}

StudyConfig desk_scale_config() {
  StudyConfig c;
  c.n_subjects = 6;
  c.kmeans.n_restarts = 200;
  return c;
}

const char* method_name(Method m) {
  switch (m) {
    case Method::fusion: return "fusion";
    case Method::dti: return "dti";
    case Method::fmri: return "fmri";
  }
  return "?";
}

void apply_json(StudyConfig& cfg, const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DataError(std::string("config: invalid JSON: ") + e.what());
  }
  auto& ph = cfg.phantom;
  const std::map<std::string, Setter> phantom{
      {"dims",
       [&](const json& v) {
         if (v.is_number_unsigned()) {
           const auto n = v.get<std::size_t>();
           ph.dims = {n, n, n};
         } else {
           ph.dims = v.get<std::array<std::size_t, 3>>();
         }
       }},
      {"spacing_mm", [&](const json& v) { read_into(v, ph.spacing_mm); }},
      {"n_regions", [&](const json& v) { read_into(v, ph.n_regions); }},
      {"n_timepoints", [&](const json& v) { read_into(v, ph.n_timepoints); }},
      {"n_directions", [&](const json& v) { read_into(v, ph.n_directions); }},
      {"b_value", [&](const json& v) { read_into(v, ph.b_value); }},
      {"s0", [&](const json& v) { read_into(v, ph.s0); }},
      {"tr_seconds", [&](const json& v) { read_into(v, ph.tr_seconds); }},
      {"dwi_downsample", [&](const json& v) { read_into(v, ph.dwi_downsample); }},
  };
  const std::map<std::string, Setter> noise{
      {"structural", [&](const json& v) { read_into(v, cfg.structural_noise); }},
      {"dwi", [&](const json& v) { read_into(v, cfg.dwi_noise); }},
      {"bold", [&](const json& v) { read_into(v, cfg.bold_noise); }},
  };
  const std::map<std::string, Setter> fusion{
      {"n_priors", [&](const json& v) { read_into(v, cfg.n_priors); }},
      {"jitter_mm", [&](const json& v) { read_into(v, cfg.prior_jitter_mm); }},
      {"patch_radius", [&](const json& v) { read_into(v, cfg.fusion.patch_radius); }},
      {"weight_exponent", [&](const json& v) { read_into(v, cfg.fusion.weight_exponent); }},
      {"epsilon", [&](const json& v) { read_into(v, cfg.fusion.epsilon); }},
  };
  const std::map<std::string, Setter> dti{
      {"k", [&](const json& v) { read_into(v, cfg.kmeans.k); }},
      {"n_restarts", [&](const json& v) { read_into(v, cfg.kmeans.n_restarts); }},
      {"max_iter", [&](const json& v) { read_into(v, cfg.kmeans.max_iter); }},
      {"tol", [&](const json& v) { read_into(v, cfg.kmeans.tol); }},
      {"alpha", [&](const json& v) { read_into(v, cfg.alpha); }},
      {"lambda", [&](const json& v) { read_into(v, cfg.fod.lambda); }},
      {"use_frt", [&](const json& v) { read_into(v, cfg.fod.use_frt); }},
  };
  const std::map<std::string, Setter> fmri{
      {"fwhm_mm", [&](const json& v) { read_into(v, cfg.preproc.fwhm_mm); }},
      {"highpass_hz", [&](const json& v) { read_into(v, cfg.preproc.highpass_hz); }},
      {"n_drop_initial", [&](const json& v) { read_into(v, cfg.preproc.n_drop_initial); }},
      {"n_components", [&](const json& v) { read_into(v, cfg.ica.n_components); }},
      {"tol", [&](const json& v) { read_into(v, cfg.ica.tol); }},
      {"max_iter", [&](const json& v) { read_into(v, cfg.ica.max_iter); }},
      {"normalize_voxel_variance", [&](const json& v) { read_into(v, cfg.ica.normalize_voxel_variance); }},
      {"strict", [&](const json& v) { read_into(v, cfg.strict); }},
  };
  const std::map<std::string, Setter> top{
      {"n_subjects", [&](const json& v) { read_into(v, cfg.n_subjects); }},
      {"seed", [&](const json& v) { read_into(v, cfg.seed); }},
      {"out_dir", [&](const json& v) { read_into(v, cfg.out_dir); }},
      {"phantom", [&](const json& v) { apply_section(v, "phantom", phantom); }},
      {"noise", [&](const json& v) { apply_section(v, "noise", noise); }},
      {"fusion", [&](const json& v) { apply_section(v, "fusion", fusion); }},
      {"dti", [&](const json& v) { apply_section(v, "dti", dti); }},
      {"fmri", [&](const json& v) { apply_section(v, "fmri", fmri); }},
  };
  apply_section(root, "", top);
}

namespace {

json config_json(const StudyConfig& c) {
  const auto& p = c.phantom;
  return json{
      {"n_subjects", c.n_subjects},
      {"seed", c.seed},
      {"phantom",
       {{"dims", p.dims},
        {"spacing_mm", p.spacing_mm},
        {"n_regions", p.n_regions},
        {"n_timepoints", p.n_timepoints},
        {"n_directions", p.n_directions},
        {"b_value", p.b_value},
        {"s0", p.s0},
        {"tr_seconds", p.tr_seconds},
        {"dwi_downsample", p.dwi_downsample}}},
      {"noise", {{"structural", c.structural_noise}, {"dwi", c.dwi_noise}, {"bold", c.bold_noise}}},
      {"fusion",
       {{"n_priors", c.n_priors},
        {"jitter_mm", c.prior_jitter_mm},
        {"patch_radius", c.fusion.patch_radius},
        {"weight_exponent", c.fusion.weight_exponent},
        {"epsilon", c.fusion.epsilon}}},
      {"dti",
       {{"k", c.kmeans.k},
        {"n_restarts", c.kmeans.n_restarts},
        {"max_iter", c.kmeans.max_iter},
        {"tol", c.kmeans.tol},
        {"alpha", c.alpha},
        {"lambda", c.fod.lambda},
        {"use_frt", c.fod.use_frt}}},
      {"fmri",
       {{"fwhm_mm", c.preproc.fwhm_mm},
        {"highpass_hz", c.preproc.highpass_hz},
        {"n_drop_initial", c.preproc.n_drop_initial},
        {"n_components", c.ica.n_components},
        {"tol", c.ica.tol},
        {"max_iter", c.ica.max_iter},
        {"normalize_voxel_variance", c.ica.normalize_voxel_variance},
        {"strict", c.strict}}},
  };
}

}  // namespace

std::string to_json(const StudyConfig& cfg) { return config_json(cfg).dump(2); }

std::vector<ScoreRecord> score_sides(const std::string& subject, const LabelVolume& test,
                                     const LabelVolume& reference) {
  require_same_grid(test.geometry(), reference.geometry(), "score_sides");
  const Geometry& g = reference.geometry();
  struct SideCounts {
    std::map<LabelId, OverlapCounts> by_label;
  };
  std::array<SideCounts, 2> sides;
  std::map<LabelId, std::size_t> test_total;
  for (std::size_t i = 0; i < g.num_voxels(); ++i) {
    const LabelId a = test.at(i), b = reference.at(i);
    if (a == 0 && b == 0) continue;
    auto& s = sides[g.world(i).x() < 0 ? 0 : 1].by_label;
    if (a != 0) {
      ++s[a].a;
      ++test_total[a];
    }
    if (b != 0) ++s[b].b;
    if (a != 0 && a == b) ++s[a].both;
  }
  std::vector<ScoreRecord> out;
  for (const auto& [id, _] : reference.names())
    for (int side = 0; side < 2; ++side) {
      ScoreRecord r;
      r.subject = subject;
      r.side = side == 0 ? Side::left : Side::right;
      r.score.nucleus = id;
      auto it = sides[static_cast<std::size_t>(side)].by_label.find(id);
      const OverlapCounts c = it == sides[static_cast<std::size_t>(side)].by_label.end() ? OverlapCounts{} : it->second;
      r.reference_volume = static_cast<double>(c.b);
      if (test_total.count(id)) {
        r.score.dice = dice(c);
        r.score.vsi = vsi(c);
      }
      out.push_back(r);
    }
  return out;
}

StudyResult run_study(const StudyConfig& cfg) {
  cfg.validate();
  StudyResult res;
  json warnings = json::array();

  PhantomSpec anatomy = cfg.phantom;
  anatomy.seed = derive_seed(cfg.seed, kAnatomyStream);
  anatomy.noise_sigma = 0.0;
  const PhantomSubject base = make_truth(anatomy);
  res.truth = base.truth;
  const LabelDictionary& names = base.truth.names();

  const std::size_t n = cfg.n_subjects;
  res.subjects.resize(n);
  std::vector<std::optional<TimeSeriesStack>> unfolded(n);

  // Per-subject paths up to the fMRI group step.
  parallel_for(n, [&](std::size_t i) {
    SubjectOutcome& out = res.subjects[i];
    out.id = subject_id(i);
    out.seed = derive_seed(cfg.seed, i + 1);
    for (Method m : kMethods) {
      out.labels[m] = std::nullopt;
      out.raw[m] = std::nullopt;
    }
    PhantomSpec spec = anatomy;
    spec.seed = out.seed;

    PhantomSubject subj = base;
    if (cfg.structural_noise > 0) {
      Rng rng = make_stream(out.seed, kStructuralNoiseStream);
      std::normal_distribution<double> gauss(0.0, cfg.structural_noise * 100.0);
      for (auto& v : subj.structural.data()) v += gauss(rng);
    }

    try {
      spec.noise_sigma = cfg.structural_noise;
      const auto priors = make_priors(subj, spec, cfg.n_priors, cfg.prior_jitter_mm);
      out.labels[Method::fusion] = fuse(subj.structural, priors, subj.mask, cfg.fusion);
    } catch (const std::exception& e) {
      out.diagnostics.push_back(std::string("fusion: ") + e.what());
    }

    try {
      spec.noise_sigma = cfg.dwi_noise;
      const DwiPhantom dwi = make_dwi(subj, spec);
      ShField field = fit_field(dwi.dwi, dwi.grads, dwi.mask, ShBasis(6), cfg.fod);
      if (!(field.geometry() == subj.truth.geometry())) field = upsample_field(field, subj.truth.geometry());
      KMeansConfig kc = cfg.kmeans;
      kc.seed = derive_seed(out.seed, kKMeansStream);
      out.raw[Method::dti] = segment_dti(field, kc, cfg.alpha);
    } catch (const std::exception& e) {
      out.diagnostics.push_back(std::string("dti: ") + e.what());
    }

    try {
      spec.noise_sigma = cfg.bold_noise;
      const BoldPhantom bold = make_bold(subj, spec);
      unfolded[i] = unfold(preprocess(bold.stack, Eigen::MatrixXd(), cfg.preproc));
    } catch (const std::exception& e) {
      out.diagnostics.push_back(std::string("fmri: ") + e.what());
    }
  });

  // Group ICA over every subject whose preprocessing succeeded.
  std::vector<TimeSeriesStack> group_input;
  std::vector<std::size_t> group_members;
  for (std::size_t i = 0; i < n; ++i)
    if (unfolded[i]) {
      group_input.push_back(*unfolded[i]);
      group_members.push_back(i);
    }
  std::optional<GroupIcaResult> group;
  if (!group_input.empty()) {
    IcaConfig ic = cfg.ica;
    ic.seed = derive_seed(cfg.seed, kIcaStream);
    try {
      group = group_ica(group_input, ic);
      if (!group->converged) {
        const std::string msg = "group ICA did not converge in " + std::to_string(ic.max_iter) + " iterations";
        if (cfg.strict) throw NumericalError(msg);
        warnings.push_back(msg);
      }
    } catch (const NumericalError&) {
      if (cfg.strict) throw;
      for (std::size_t i : group_members) res.subjects[i].diagnostics.push_back("fmri: group ICA failed numerically");
      group.reset();
    } catch (const std::exception& e) {
      for (std::size_t i : group_members) res.subjects[i].diagnostics.push_back(std::string("fmri: ") + e.what());
      group.reset();
    }
  }
  group_input.clear();
  if (group)
    parallel_for(group_members.size(), [&](std::size_t g) {
      const std::size_t i = group_members[g];
      try {
        const auto dr = dual_regression(*unfolded[i], *group);
        res.subjects[i].raw[Method::fmri] = hard_parcellate(dr.maps, unfolded[i]->mask);
      } catch (const std::exception& e) {
        res.subjects[i].diagnostics.push_back(std::string("fmri: ") + e.what());
      }
    });
  unfolded.clear();

  // Regroup DTI clusters and fMRI components onto the fusion labels.
  std::vector<LabelVolume> references;
  for (const auto& s : res.subjects)
    if (s.labels.at(Method::fusion)) references.push_back(*s.labels.at(Method::fusion));
  json mappings = json::object();
  for (Method m : {Method::dti, Method::fmri}) {
    std::vector<LabelVolume> sources;
    std::vector<std::size_t> owners;
    for (std::size_t i = 0; i < n; ++i)
      if (res.subjects[i].raw[m]) {
        sources.push_back(*res.subjects[i].raw[m]);
        owners.push_back(i);
      }
    if (sources.empty()) continue;
    if (references.empty()) {
      for (std::size_t i : owners)
        res.subjects[i].diagnostics.push_back(std::string(method_name(m)) + ": no fusion labels to regroup onto");
      continue;
    }
    RegroupResult rg = regroup(sources, references);
    json mj = json::object();
    for (const auto& [src, dst] : rg.mapping) mj[std::to_string(src)] = dst;
    mappings[method_name(m)] = mj;
    for (std::size_t k = 0; k < owners.size(); ++k) res.subjects[owners[k]].labels[m] = std::move(rg.regrouped[k]);
  }

  // Agreement tables.
  const std::vector<std::tuple<std::string, std::optional<Method>, std::optional<Method>>> pairs{
      {"dti_vs_fusion", Method::dti, Method::fusion},
      {"fmri_vs_fusion", Method::fmri, Method::fusion},
      {"dti_vs_fmri", Method::dti, Method::fmri},
      {"fusion_vs_truth", Method::fusion, std::nullopt},
      {"dti_vs_truth", Method::dti, std::nullopt},
      {"fmri_vs_truth", Method::fmri, std::nullopt},
  };
  for (const auto& [name, test, ref] : pairs) {
    std::vector<ScoreRecord> records;
    for (const auto& s : res.subjects) {
      const auto& a = s.labels.at(*test);
      const LabelVolume* b = ref ? (s.labels.at(*ref) ? &*s.labels.at(*ref) : nullptr) : &res.truth;
      if (!a || !b) continue;
      auto r = score_sides(s.id, *a, *b);
      records.insert(records.end(), r.begin(), r.end());
    }
    if (records.empty()) {
      warnings.push_back("table " + name + ": no subject has both segmentations");
      continue;
    }
    res.tables[name] = emit_table(records, names);
  }

  for (Method m : kMethods) {
    std::vector<LabelVolume> segs;
    auto& md = res.matched_dice[m];
    for (const auto& s : res.subjects) {
      if (s.labels.at(m)) segs.push_back(*s.labels.at(m));
      const auto& raw = m == Method::fusion ? s.labels.at(m) : s.raw.at(m);
      md.push_back(raw ? std::optional<double>(matched_mean_dice(*raw, res.truth)) : std::nullopt);
    }
    if (segs.empty()) continue;
    res.atlases[m] = probability_atlas(segs);
    if (segs.size() >= 2) {
      res.scatter[m] = centroid_scatter(segs);
      for (const auto& w : res.scatter[m].warnings) warnings.push_back(std::string(method_name(m)) + ": " + w);
    }
  }

  // Outputs and manifest.
  json content = json::object();
  json files = json::object();
  const bool write = !cfg.out_dir.empty();
  const fs::path root(cfg.out_dir);
  auto record_file = [&](const fs::path& p) {
    files[fs::relative(p, root).generic_string()] = sha256_file(p.string());
  };
  if (write) fs::create_directories(root);

  json subjects = json::array();
  for (const auto& s : res.subjects) {
    json sj{{"id", s.id}, {"seed", s.seed}, {"diagnostics", s.diagnostics}};
    for (Method m : kMethods) {
      const char* mn = method_name(m);
      const fs::path dir = root / s.id / mn;
      if (write && (s.labels.at(m) || s.raw.at(m))) fs::create_directories(dir);
      if (s.labels.at(m)) {
        content[s.id + "/" + mn + "/labels"] = hash_labels(*s.labels.at(m));
        if (write) {
          write_nifti(*s.labels.at(m), (dir / "labels.nii").string());
          record_file(dir / "labels.nii");
        }
      }
      if (s.raw.at(m)) {
        content[s.id + "/" + mn + "/raw"] = hash_labels(*s.raw.at(m));
        if (write) {
          const char* raw_name = m == Method::dti ? "clusters.nii" : "components.nii";
          write_nifti(*s.raw.at(m), (dir / raw_name).string());
          record_file(dir / raw_name);
        }
      }
    }
    subjects.push_back(sj);
  }

  std::ostringstream md_csv;
  md_csv << "subject,fusion,dti,fmri\n" << std::fixed << std::setprecision(4);
  for (std::size_t i = 0; i < n; ++i) {
    md_csv << res.subjects[i].id;
    for (Method m : kMethods) {
      md_csv << ',';
      if (res.matched_dice[m][i]) md_csv << *res.matched_dice[m][i];
    }
    md_csv << '\n';
  }
  content["tables/matched_dice"] = sha256_hex(md_csv.str());
  for (const auto& [name, t] : res.tables) content["tables/" + name] = sha256_hex(t.to_csv());
  for (const auto& [m, s] : res.scatter) content[std::string("atlases/") + method_name(m) + "_centroids"] = sha256_hex(centroid_csv(s, names));
  for (const auto& [m, a] : res.atlases) content[std::string("atlases/") + method_name(m) + "/maxprob"] = hash_labels(a.max_prob);

  if (write) {
    const fs::path tables = root / "tables";
    const fs::path atlases = root / "atlases";
    fs::create_directories(tables);
    fs::create_directories(atlases);
    write_text(tables / "matched_dice.csv", md_csv.str());
    record_file(tables / "matched_dice.csv");
    for (const auto& [name, t] : res.tables) {
      t.write_csv((tables / (name + ".csv")).string());
      record_file(tables / (name + ".csv"));
    }
    write_nifti(res.truth, (atlases / "truth.nii").string());
    record_file(atlases / "truth.nii");
    for (const auto& [m, a] : res.atlases) {
      const fs::path dir = atlases / method_name(m);
      fs::create_directories(dir);
      write_nifti(a.max_prob, (dir / "maxprob.nii").string());
      record_file(dir / "maxprob.nii");
      for (const auto& [id, f] : a.frequency) {
        auto it = names.find(id);
        const std::string file = "prob_" + (it == names.end() ? std::to_string(id) : it->second) + ".nii";
        write_nifti(f, (dir / file).string());
        record_file(dir / file);
      }
      write_png(render_probability(a), (dir / "probability.png").string());
      record_file(dir / "probability.png");
    }
    for (const auto& [m, s] : res.scatter) {
      const fs::path p = atlases / (std::string(method_name(m)) + "_centroids.csv");
      write_text(p, centroid_csv(s, names));
      record_file(p);
    }
  }

  const json manifest{
      {"toolkit_version", kToolkitVersion},
      {"format_version", kFormatVersion},
      {"config", config_json(cfg)},
      {"anatomy_seed", anatomy.seed},
      {"ica_seed", derive_seed(cfg.seed, kIcaStream)},
      {"subjects", subjects},
      {"regroup_mappings", mappings},
      {"warnings", warnings},
      {"content", content},
      {"files", files},
  };
  res.manifest = manifest.dump(2) + "\n";
  res.manifest_hash = sha256_hex(res.manifest);
  if (write) {
    write_text(root / "manifest.json", res.manifest);
    write_text(root / "manifest.sha256", res.manifest_hash + "\n");
  }
  return res;
}

}  // namespace parcelbench
