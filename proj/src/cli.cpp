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
#include "parcelbench/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "parcelbench/cluster.hpp"
#include "parcelbench/errors.hpp"
#include "parcelbench/fod.hpp"
#include "parcelbench/fusion.hpp"
#include "parcelbench/icp.hpp"
#include "parcelbench/metrics.hpp"
#include "parcelbench/nifti.hpp"
#include "parcelbench/phantom.hpp"
#include "parcelbench/pipeline.hpp"
#include "parcelbench/render.hpp"

namespace parcelbench {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Invalid command line or config keys; exits with the usage code.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void flatten(const json& v, std::vector<std::string>& out) {
  if (v.is_array()) {
    for (const auto& e : v) flatten(e, out);
  } else if (v.is_string()) {
    out.push_back(v.get<std::string>());
  } else if (v.is_boolean()) {
    out.push_back(v.get<bool>() ? "true" : "false");
  } else if (v.is_number()) {
    out.push_back(v.dump());
  } else {
    throw UsageError("config: values must be scalars or arrays");
  }
}

// Flat JSON object keyed by long flag names; arrays become repeated values.
// Flags given on the command line win.
void apply_flag_config(CLI::App& sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("config: top level must be an object");
  for (const auto& [key, value] : j.items()) {
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config") throw UsageError("config: unknown key '" + key + "' for " + sub.get_name());
    if (opt->count() > 0) continue;
    std::vector<std::string> values;
    flatten(value, values);
    for (const auto& v : values) opt->add_result(v);
    try {
      opt->run_callback();
    } catch (const CLI::ParseError& e) {
      throw UsageError("config: bad value for '" + key + "': " + e.what());
    }
  }
}

LabelScheme parse_scheme(const std::string& s) { return s == "numeric" ? LabelScheme::numeric : LabelScheme::nuclei; }

std::string strip_nifti_ext(const std::string& path) {
  for (const char* ext : {".nii.gz", ".nii"}) {
    const std::string e(ext);
    if (path.size() > e.size() && path.compare(path.size() - e.size(), e.size(), e) == 0)
      return path.substr(0, path.size() - e.size());
  }
  return path;
}

std::string fmt(const std::optional<double>& x) {
  if (!x) return {};
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << *x;
  return os.str();
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

Volume maps_volume(const Eigen::MatrixXd& maps, const Mask& mask) {
  TimeSeriesStack s;
  s.mask = mask;
  s.series = maps.transpose();
  Volume v = s.to_volume();
  v.set_ndim(4);
  return v;
}

Eigen::MatrixXd read_maps(const std::string& path, const Mask& mask) {
  return TimeSeriesStack::from_volume(read_nifti(path), mask).series.transpose();
}

TimeSeriesStack read_stack(const std::string& path, const Mask& mask, double fallback_tr) {
  const Volume v = read_nifti(path);
  TimeSeriesStack s = TimeSeriesStack::from_volume(v, mask);
  s.tr_seconds = v.time_step() > 0 ? v.time_step() : fallback_tr;
  return s;
}

void write_stack(const TimeSeriesStack& s, const std::string& path) {
  Volume v = s.to_volume();
  v.set_time_step(s.tr_seconds);
  ensure_parent(path);
  write_nifti(v, path);
}

std::vector<LabelVolume> read_labels(const std::vector<std::string>& paths, LabelScheme scheme) {
  std::vector<LabelVolume> out;
  for (const auto& p : paths) out.push_back(read_label_nifti(p, scheme));
  return out;
}

// Common flags of every command.
struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, Common& c,
                      bool out_required) {
  CLI::App* sub = app.add_subcommand(name, help);
  sub->add_option("--config", c.config, "JSON file of flag values (flags on the command line win)")
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Master seed");
  sub->add_option("--out", c.out, out_required ? "Output path (required)" : "Output path");
  return sub;
}

}  // namespace

int parse_and_dispatch(int argc, const char* const* argv) { return parse_and_dispatch(argc, argv, std::cout, std::cerr); }

int parse_and_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app("Thalamus parcellation toolkit: label fusion, diffusion clustering, connectivity ICA and agreement metrics.",
               "parcelbench");
  app.set_version_flag("--version", std::string("parcelbench ") + kToolkitVersion + " (output format " +
                                        kFormatVersion + ", NIfTI-1 single file)");
  app.require_subcommand(1);
  Common c;
  std::function<void()> run;

  // phantom
  PhantomSpec ps;
  std::size_t dims = 48, n_priors = 0;
  double jitter = 1.0;
  std::vector<std::string> modalities{"structural", "dwi", "bold"};
  {
    auto* s = add_command(app, "phantom", "Synthesize a subject with known ground truth", c, true);
    s->add_option("--regions", ps.n_regions, "Number of parcels")->capture_default_str();
    s->add_option("--dims", dims, "Grid size per axis")->capture_default_str();
    s->add_option("--spacing", ps.spacing_mm, "Voxel size in mm")->capture_default_str();
    s->add_option("--noise", ps.noise_sigma, "Relative noise level")->capture_default_str();
    s->add_option("--timepoints", ps.n_timepoints, "BOLD frames")->capture_default_str();
    s->add_option("--directions", ps.n_directions, "Diffusion directions")->capture_default_str();
    s->add_option("--bval", ps.b_value, "b-value (s/mm^2)")->capture_default_str();
    s->add_option("--tr", ps.tr_seconds, "BOLD repetition time (s)")->capture_default_str();
    s->add_option("--downsample", ps.dwi_downsample, "Diffusion grid coarsening factor")->capture_default_str();
    s->add_option("--priors", n_priors, "Number of atlas priors to emit")->capture_default_str();
    s->add_option("--jitter", jitter, "Prior shift in mm")->capture_default_str();
    s->add_option("--modalities", modalities, "Subset of structural, dwi, bold")
        ->check(CLI::IsMember({"structural", "dwi", "bold"}));
    s->callback([&] {
      run = [&] {
        ps.seed = c.seed;
        ps.dims = {dims, dims, dims};
        const fs::path dir(c.out);
        fs::create_directories(dir);
        const PhantomSubject subj = make_truth(ps);
        write_nifti(subj.truth, (dir / "truth.nii").string());
        write_nifti(subj.mask, (dir / "mask.nii").string());
        auto has = [&](const char* m) { return std::find(modalities.begin(), modalities.end(), m) != modalities.end(); };
        if (has("structural")) write_nifti(subj.structural, (dir / "structural.nii").string());
        if (has("dwi")) {
          const DwiPhantom d = make_dwi(subj, ps);
          write_nifti(d.dwi, (dir / "dwi.nii").string());
          write_nifti(d.mask, (dir / "dwi_mask.nii").string());
          write_nifti(d.truth, (dir / "dwi_truth.nii").string());
          d.grads.write((dir / "grads.txt").string());
        }
        if (has("bold")) write_stack(make_bold(subj, ps).stack, (dir / "bold.nii").string());
        if (n_priors > 0) {
          fs::create_directories(dir / "priors");
          const auto priors = make_priors(subj, ps, n_priors, jitter);
          for (std::size_t p = 0; p < priors.size(); ++p) {
            std::ostringstream stem;
            stem << "prior_" << std::setw(2) << std::setfill('0') << (p + 1);
            write_nifti(priors[p].intensity, (dir / "priors" / (stem.str() + "_intensity.nii")).string());
            write_nifti(priors[p].labels, (dir / "priors" / (stem.str() + "_labels.nii")).string());
          }
        }
      };
    });
  }

  // fuse
  std::string target, mask_path, scheme = "nuclei";
  std::vector<std::string> prior_files;
  FusionConfig fc;
  {
    auto* s = add_command(app, "fuse", "Multi-atlas label fusion", c, true);
    s->add_option("target", target, "Target intensity volume")->required()->check(CLI::ExistingFile);
    s->add_option("mask", mask_path, "Mask volume")->required()->check(CLI::ExistingFile);
    s->add_option("--prior", prior_files, "Prior intensity and label files (pairs)")->expected(2)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    s->add_option("--patch-radius", fc.patch_radius, "Patch radius in voxels")->capture_default_str();
    s->add_option("--beta", fc.weight_exponent, "Weight exponent")->capture_default_str();
    s->add_option("--epsilon", fc.epsilon, "Weight guard")->capture_default_str();
    s->add_option("--scheme", scheme, "Label naming: nuclei or numeric")->check(CLI::IsMember({"nuclei", "numeric"}));
    s->callback([&] {
      run = [&] {
        if (prior_files.empty() || prior_files.size() % 2 != 0)
          throw UsageError("fuse: --prior needs one or more intensity/label pairs");
        std::vector<AtlasPrior> priors;
        for (std::size_t i = 0; i < prior_files.size(); i += 2)
          priors.push_back({read_nifti(prior_files[i]), read_label_nifti(prior_files[i + 1], parse_scheme(scheme))});
        const LabelVolume fused = fuse(read_nifti(target), priors, read_mask_nifti(mask_path), fc);
        ensure_parent(c.out);
        write_nifti(fused, c.out);
      };
    });
  }

  // fod-fit
  std::string dwi_path, grads_path, mask_out;
  FodConfig fod;
  bool no_frt = false;
  double upsample_mm = 0.0;
  {
    auto* s = add_command(app, "fod-fit", "Fit order-6 spherical-harmonic ODF coefficients", c, true);
    s->add_option("dwi", dwi_path, "4D diffusion volume")->required()->check(CLI::ExistingFile);
    s->add_option("grads", grads_path, "Gradient table (gx gy gz b per line)")->required()->check(CLI::ExistingFile);
    s->add_option("mask", mask_path, "Mask volume")->required()->check(CLI::ExistingFile);
    s->add_option("--mask-out", mask_out, "Where to write the coefficient mask (default <out>_mask.nii)");
    s->add_option("--lambda", fod.lambda, "Laplace-Beltrami regularization")->capture_default_str();
    s->add_flag("--no-frt", no_frt, "Keep signal coefficients (skip the Funk-Radon transform)");
    s->add_option("--upsample", upsample_mm, "Resample to this isotropic spacing in mm (0: keep grid)");
    s->callback([&] {
      run = [&] {
        fod.use_frt = !no_frt;
        ShField f = fit_field(read_nifti(dwi_path), GradientTable::read(grads_path), read_mask_nifti(mask_path),
                              ShBasis(6), fod);
        for (std::size_t v : f.skipped) err << "fod-fit: voxel " << v << " has no b=0 signal; coefficients zeroed\n";
        if (upsample_mm > 0) f = upsample_field(f, isotropic_geometry(f.geometry(), upsample_mm));
        ensure_parent(c.out);
        write_sh_field(f, c.out, mask_out.empty() ? strip_nifti_ext(c.out) + "_mask.nii" : mask_out);
      };
    });
  }

  // dti-seg
  std::string sh_path, sh_mask, centroids_out;
  KMeansConfig kc;
  double alpha = 100.0;
  {
    auto* s = add_command(app, "dti-seg", "Spatial-spectral k-means on an SH field", c, true);
    s->add_option("sh", sh_path, "SH coefficient volume")->required()->check(CLI::ExistingFile);
    s->add_option("sh_mask", sh_mask, "Coefficient mask")->required()->check(CLI::ExistingFile);
    s->add_option("--k", kc.k, "Clusters")->capture_default_str();
    s->add_option("--restarts", kc.n_restarts, "Seeding restarts")->capture_default_str();
    s->add_option("--max-iter", kc.max_iter, "Lloyd iterations per run")->capture_default_str();
    s->add_option("--alpha", alpha, "SH coefficient weight")->capture_default_str();
    s->add_option("--centroids", centroids_out, "Optional CSV of final centroids");
    s->callback([&] {
      run = [&] {
        kc.seed = c.seed;
        Eigen::MatrixXd centroids;
        const LabelVolume seg = segment_dti(read_sh_field(sh_path, sh_mask), kc, alpha, &centroids);
        ensure_parent(c.out);
        write_nifti(seg, c.out);
        if (!centroids_out.empty()) write_centroids_csv(centroids, centroids_out);
      };
    });
  }

  // icp-preproc
  std::string bold_path, nuisance_path, report_path;
  PreprocConfig pc;
  double tr = 0.7;
  {
    auto* s = add_command(app, "icp-preproc", "Drop, smooth, high-pass and despike BOLD data", c, true);
    s->add_option("bold", bold_path, "4D BOLD volume")->required()->check(CLI::ExistingFile);
    s->add_option("mask", mask_path, "Mask volume")->required()->check(CLI::ExistingFile);
    s->add_option("--nuisance", nuisance_path, "CSV of nuisance regressors (one row per frame)")->check(CLI::ExistingFile);
    s->add_option("--fwhm", pc.fwhm_mm, "Smoothing FWHM in mm")->capture_default_str();
    s->add_option("--highpass", pc.highpass_hz, "High-pass cutoff in Hz")->capture_default_str();
    s->add_option("--drop", pc.n_drop_initial, "Initial frames to discard")->capture_default_str();
    s->add_option("--tr", tr, "Repetition time when the header lacks one")->capture_default_str();
    s->add_option("--report", report_path, "Optional JSON report of spikes and drift terms");
    s->callback([&] {
      run = [&] {
        const TimeSeriesStack raw = read_stack(bold_path, read_mask_nifti(mask_path), tr);
        const Eigen::MatrixXd nuisance = nuisance_path.empty() ? Eigen::MatrixXd() : read_regressor_csv(nuisance_path);
        PreprocReport rep;
        const TimeSeriesStack res = preprocess(raw, nuisance, pc, &rep);
        write_stack(res, c.out);
        if (!report_path.empty()) {
          std::ofstream os(report_path);
          if (!os) throw DataError("cannot create " + report_path);
          os << json{{"spike_frames", rep.spike_frames},
                     {"spike_threshold", rep.spike_threshold},
                     {"rms", rep.rms},
                     {"n_drift_regressors", rep.n_drift_regressors}}
                    .dump(2)
             << '\n';
        }
      };
    });
  }

  // icp-unfold
  {
    auto* s = add_command(app, "icp-unfold", "Instantaneous-connectivity unfolding", c, true);
    s->add_option("bold", bold_path, "Preprocessed 4D volume")->required()->check(CLI::ExistingFile);
    s->add_option("mask", mask_path, "Mask volume")->required()->check(CLI::ExistingFile);
    s->callback([&] {
      run = [&] {
        std::vector<std::size_t> zero;
        const TimeSeriesStack u = unfold(read_stack(bold_path, read_mask_nifti(mask_path), 0.7), &zero);
        if (!zero.empty()) err << "icp-unfold: " << zero.size() << " zero-variance voxels set to zero\n";
        write_stack(u, c.out);
      };
    });
  }

  // icp-ica
  std::vector<std::string> inputs;
  IcaConfig ic;
  bool no_voxel_norm = false, strict = false;
  {
    auto* s = add_command(app, "icp-ica", "Group spatial ICA over temporally concatenated subjects", c, true);
    s->add_option("inputs", inputs, "Unfolded 4D volumes")->required()->check(CLI::ExistingFile);
    s->add_option("--mask", mask_path, "Mask volume")->required()->check(CLI::ExistingFile);
    s->add_option("--components", ic.n_components, "Number of components")->capture_default_str();
    s->add_option("--tol", ic.tol, "Convergence tolerance")->capture_default_str();
    s->add_option("--max-iter", ic.max_iter, "Fixed-point iterations")->capture_default_str();
    s->add_flag("--no-voxel-norm", no_voxel_norm, "Skip per-voxel variance normalization");
    s->add_flag("--strict", strict, "Treat non-convergence as a numerical failure");
    s->callback([&] {
      run = [&] {
        const Mask mask = read_mask_nifti(mask_path);
        std::vector<TimeSeriesStack> stacks;
        for (const auto& p : inputs) stacks.push_back(read_stack(p, mask, 0.7));
        ic.seed = c.seed;
        ic.normalize_voxel_variance = !no_voxel_norm;
        const GroupIcaResult g = group_ica(stacks, ic);
        if (!g.converged) {
          const std::string msg = "icp-ica: no convergence after " + std::to_string(g.iterations) + " iterations";
          if (strict) throw NumericalError(msg);
          err << msg << "; writing the last iterate\n";
        }
        ensure_parent(c.out);
        write_nifti(maps_volume(g.maps, g.mask), c.out);
      };
    });
  }

  // icp-dualreg
  std::string unfolded_path, maps_path, tc_out;
  {
    auto* s = add_command(app, "icp-dualreg", "Dual regression of group maps into one subject", c, true);
    s->add_option("unfolded", unfolded_path, "Subject's unfolded 4D volume")->required()->check(CLI::ExistingFile);
    s->add_option("maps", maps_path, "Group maps (4D, one frame per component)")->required()->check(CLI::ExistingFile);
    s->add_option("mask", mask_path, "Mask volume")->required()->check(CLI::ExistingFile);
    s->add_option("--timecourses", tc_out, "Optional CSV of stage-one time courses");
    s->callback([&] {
      run = [&] {
        const Mask mask = read_mask_nifti(mask_path);
        const DualRegressionResult dr =
            dual_regression(read_stack(unfolded_path, mask, 0.7), read_maps(maps_path, mask));
        ensure_parent(c.out);
        write_nifti(maps_volume(dr.maps, mask), c.out);
        if (!tc_out.empty()) {
          std::ofstream os(tc_out);
          if (!os) throw DataError("cannot create " + tc_out);
          os << std::setprecision(17);
          for (Eigen::Index t = 0; t < dr.timecourses.rows(); ++t) {
            for (Eigen::Index k = 0; k < dr.timecourses.cols(); ++k) os << (k ? "," : "") << dr.timecourses(t, k);
            os << '\n';
          }
        }
      };
    });
  }

  // icp-parcel
  {
    auto* s = add_command(app, "icp-parcel", "Hard parcellation by argmax of z-scored maps", c, true);
    s->add_option("maps", maps_path, "Subject maps (4D)")->required()->check(CLI::ExistingFile);
    s->add_option("mask", mask_path, "Mask volume")->required()->check(CLI::ExistingFile);
    s->callback([&] {
      run = [&] {
        const Mask mask = read_mask_nifti(mask_path);
        ensure_parent(c.out);
        write_nifti(hard_parcellate(read_maps(maps_path, mask), mask), c.out);
      };
    });
  }

  // regroup
  std::vector<std::string> sources, references;
  {
    auto* s = add_command(app, "regroup", "Map source labels onto reference labels by max-probability overlap", c, true);
    s->add_option("--sources", sources, "Source label volumes")->required()->check(CLI::ExistingFile);
    s->add_option("--references", references, "Reference label volumes")->required()->check(CLI::ExistingFile);
    s->add_option("--scheme", scheme, "Reference label naming: nuclei or numeric")->check(CLI::IsMember({"nuclei", "numeric"}));
    s->callback([&] {
      run = [&] {
        const RegroupResult r = regroup(read_labels(sources, LabelScheme::numeric), read_labels(references, parse_scheme(scheme)));
        const fs::path dir(c.out);
        fs::create_directories(dir);
        std::ofstream os(dir / "mapping.csv");
        if (!os) throw DataError("cannot create mapping.csv in " + c.out);
        os << "source,target\n";
        for (const auto& [a, b] : r.mapping) os << a << ',' << b << '\n';
        for (std::size_t i = 0; i < sources.size(); ++i) {
          const std::string stem = strip_nifti_ext(fs::path(sources[i]).filename().string());
          write_nifti(r.regrouped[i], (dir / (stem + "_regrouped.nii")).string());
        }
      };
    });
  }

  // metrics
  std::string a_path, b_path;
  std::optional<LabelId> label;
  {
    auto* s = add_command(app, "metrics", "Dice and VSI between two label volumes", c, false);
    s->add_option("a", a_path, "First label volume")->required()->check(CLI::ExistingFile);
    s->add_option("b", b_path, "Second label volume")->required()->check(CLI::ExistingFile);
    s->add_option("--label", label, "Single label id (default: every label present)");
    s->callback([&] {
      run = [&] {
        const LabelVolume a = read_label_nifti(a_path, LabelScheme::numeric);
        const LabelVolume b = read_label_nifti(b_path, LabelScheme::numeric);
        std::vector<LabelId> ids;
        if (label) {
          ids.push_back(*label);
        } else {
          std::set<LabelId> all;
          for (LabelId id : a.present_labels()) all.insert(id);
          for (LabelId id : b.present_labels()) all.insert(id);
          ids.assign(all.begin(), all.end());
        }
        std::ostringstream lines;
        for (LabelId id : ids) {
          const OverlapCounts cnt = overlap_counts(a, b, id);
          if (!label) lines << "label=" << id << ',';
          lines << "dice=" << fmt(dice(cnt)) << ",vsi=" << fmt(vsi(cnt)) << '\n';
        }
        if (c.out.empty()) {
          out << lines.str();
        } else {
          ensure_parent(c.out);
          std::ofstream os(c.out);
          if (!os) throw DataError("cannot create " + c.out);
          os << lines.str();
        }
      };
    });
  }

  // probmap
  std::vector<std::string> segs;
  {
    auto* s = add_command(app, "probmap", "Per-label frequency volumes and maximum-probability map", c, true);
    s->add_option("segs", segs, "Label volumes on a common grid")->required()->check(CLI::ExistingFile);
    s->add_option("--scheme", scheme, "Label naming: nuclei or numeric")->check(CLI::IsMember({"nuclei", "numeric"}));
    s->callback([&] {
      run = [&] {
        const ProbabilityAtlas atlas = probability_atlas(read_labels(segs, parse_scheme(scheme)));
        const fs::path dir(c.out);
        fs::create_directories(dir);
        write_nifti(atlas.max_prob, (dir / "maxprob.nii").string());
        for (const auto& [id, f] : atlas.frequency)
          write_nifti(f, (dir / ("prob_" + atlas.max_prob.name_of(id) + ".nii")).string());
      };
    });
  }

  // centroids
  {
    auto* s = add_command(app, "centroids", "Centroid scatter of each label across subjects", c, true);
    s->add_option("segs", segs, "Label volumes on a common grid")->required()->check(CLI::ExistingFile);
    s->add_option("--scheme", scheme, "Label naming: nuclei or numeric")->check(CLI::IsMember({"nuclei", "numeric"}));
    s->callback([&] {
      run = [&] {
        const auto volumes = read_labels(segs, parse_scheme(scheme));
        const CentroidScatter sc = centroid_scatter(volumes);
        for (const auto& w : sc.warnings) err << "centroids: " << w << '\n';
        ensure_parent(c.out);
        std::ofstream os(c.out);
        if (!os) throw DataError("cannot create " + c.out);
        os << "label,name,n_subjects,mean_x,mean_y,mean_z,rms_radius\n" << std::fixed << std::setprecision(4);
        for (const auto& [id, sp] : sc.labels)
          os << id << ',' << volumes.front().name_of(id) << ',' << sp.n_subjects << ',' << sp.mean.x() << ','
             << sp.mean.y() << ',' << sp.mean.z() << ',' << sp.rms_radius << '\n';
      };
    });
  }

  // study
  std::string study_config;
  std::optional<std::size_t> n_subjects;
  {
    CLI::App* s = app.add_subcommand("study", "Run the full cross-method study on a synthetic cohort");
    s->add_option("--config", study_config, "Study JSON (see README)")->check(CLI::ExistingFile);
    auto* seed_opt = s->add_option("--seed", c.seed, "Master seed");
    s->add_option("--out", c.out, "Output directory");
    s->add_option("--subjects", n_subjects, "Number of subjects");
    s->callback([&, seed_opt] {
      run = [&, seed_opt] {
        StudyConfig cfg;
        if (!study_config.empty()) {
          std::ifstream in(study_config);
          std::stringstream buf;
          buf << in.rdbuf();
          apply_json(cfg, buf.str());
        }
        if (seed_opt->count() > 0) cfg.seed = c.seed;
        if (!c.out.empty()) cfg.out_dir = c.out;
        if (n_subjects) cfg.n_subjects = *n_subjects;
        if (cfg.out_dir.empty()) throw DataError("study: no output directory (--out or out_dir)");
        const StudyResult r = run_study(cfg);
        for (const auto& s : r.subjects)
          for (const auto& d : s.diagnostics) err << s.id << ": " << d << '\n';
        err << "study: manifest " << r.manifest_hash << '\n';
      };
    });
  }

  // render
  int scale = 4;
  {
    auto* s = add_command(app, "render", "Tri-planar PNG of a label volume, or a blended atlas of several", c, true);
    s->add_option("segs", segs, "One label volume, or several for a probability blend")->required()->check(CLI::ExistingFile);
    s->add_option("--scale", scale, "Pixels per voxel")->capture_default_str();
    s->callback([&] {
      run = [&] {
        const auto volumes = read_labels(segs, LabelScheme::numeric);
        const Image img = volumes.size() == 1 ? render_labels(volumes.front(), scale)
                                              : render_probability(probability_atlas(volumes), scale);
        ensure_parent(c.out);
        write_png(img, c.out);
      };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  try {
    CLI::App* sub = app.get_subcommands().front();
    if (sub->get_name() != "study") {
      if (!c.config.empty()) apply_flag_config(*sub, c.config);
      if (c.out.empty() && sub->get_name() != "metrics") throw UsageError(sub->get_name() + ": --out is required");
    }
    if (run) run();
    return 0;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\nRun with --help for more information.\n";
    return 1;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace parcelbench
