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
#include "parcelbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "parcelbench/errors.hpp"

namespace parcelbench {

OverlapCounts overlap_counts(const LabelVolume& a, const LabelVolume& b, LabelId label) {
  require_same_grid(a.geometry(), b.geometry(), "overlap");
  OverlapCounts c;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const bool in_a = da[i] == label;
    const bool in_b = db[i] == label;
    c.a += in_a;
    c.b += in_b;
    c.both += in_a && in_b;
  }
  return c;
}

std::optional<double> dice(const OverlapCounts& c) {
  if (c.a + c.b == 0) return std::nullopt;
  return static_cast<double>(2 * c.both) / static_cast<double>(c.a + c.b);
}

std::optional<double> vsi(const OverlapCounts& c) {
  if (c.a + c.b == 0) return std::nullopt;
  // 1 - |a - b| / (a + b) rewritten as one division so the result is the
  // correctly rounded ratio.
  return static_cast<double>(2 * std::min(c.a, c.b)) / static_cast<double>(c.a + c.b);
}

std::optional<double> dice(const LabelVolume& a, const LabelVolume& b, LabelId label) {
  return dice(overlap_counts(a, b, label));
}

std::optional<double> vsi(const LabelVolume& a, const LabelVolume& b, LabelId label) {
  return vsi(overlap_counts(a, b, label));
}

ProbabilityAtlas probability_atlas(const std::vector<LabelVolume>& segs) {
  if (segs.empty()) throw DataError("probability atlas: no segmentations");
  const Geometry& g = segs.front().geometry();
  for (const auto& s : segs) {
    require_same_grid(g, s.geometry(), "probability atlas");
    if (s.names() != segs.front().names()) throw DataError("probability atlas: label dictionaries differ");
  }
  std::set<LabelId> ids;
  for (const auto& s : segs)
    for (LabelId id : s.present_labels()) ids.insert(id);
  for (const auto& [id, _] : segs.front().names()) ids.insert(id);

  const std::size_t nvox = g.num_voxels();
  std::map<LabelId, std::vector<std::size_t>> counts;
  for (LabelId id : ids) counts[id].assign(nvox, 0);
  for (const auto& s : segs)
    for (std::size_t i = 0; i < nvox; ++i)
      if (s.at(i) != 0) ++counts[s.at(i)][i];

  ProbabilityAtlas atlas;
  atlas.n_subjects = segs.size();
  atlas.max_prob = LabelVolume(g, segs.front().names());
  const auto n = static_cast<double>(segs.size());
  for (const auto& [id, c] : counts) {
    Volume f(g);
    for (std::size_t i = 0; i < nvox; ++i) f.at(i) = static_cast<double>(c[i]) / n;
    atlas.frequency.emplace(id, std::move(f));
  }
  for (std::size_t i = 0; i < nvox; ++i) {
    LabelId best = 0;
    std::size_t best_c = 0;
    for (const auto& [id, c] : counts)  // ascending ids; strict > keeps the lower id
      if (c[i] > best_c) {
        best_c = c[i];
        best = id;
      }
    atlas.max_prob.at(i) = best;
  }
  return atlas;
}

std::map<LabelId, Eigen::Vector3d> centroids(const LabelVolume& seg) {
  std::map<LabelId, Eigen::Vector3d> sum;
  std::map<LabelId, std::size_t> count;
  const Geometry& g = seg.geometry();
  for (std::size_t i = 0; i < g.num_voxels(); ++i) {
    const LabelId id = seg.at(i);
    if (id == 0) continue;
    auto [it, fresh] = sum.try_emplace(id, Eigen::Vector3d::Zero());
    it->second += g.world(i);
    ++count[id];
  }
  for (auto& [id, s] : sum) s /= static_cast<double>(count[id]);
  return sum;
}

CentroidScatter centroid_scatter(const std::vector<LabelVolume>& segs) {
  if (segs.size() < 2) throw DataError("centroid scatter: need at least two segmentations");
  std::map<LabelId, std::vector<Eigen::Vector3d>> per_label;
  for (const auto& s : segs)
    for (const auto& [id, c] : centroids(s)) per_label[id].push_back(c);
  CentroidScatter out;
  for (const auto& [id, pts] : per_label) {
    if (pts.size() < 2) {
      out.warnings.push_back("label " + std::to_string(id) + " present in only one segmentation; omitted");
      continue;
    }
    CentroidSpread s;
    s.n_subjects = pts.size();
    for (const auto& p : pts) s.mean += p;
    s.mean /= static_cast<double>(pts.size());
    double ss = 0;
    for (const auto& p : pts) ss += (p - s.mean).squaredNorm();
    s.rms_radius = std::sqrt(ss / static_cast<double>(pts.size()));
    out.labels.emplace(id, s);
  }
  return out;
}

LabelVolume apply_mapping(const LabelVolume& seg, const LabelMapping& mapping, const LabelDictionary& names) {
  LabelVolume out(seg.geometry(), names);
  for (std::size_t i = 0; i < seg.data().size(); ++i) {
    const LabelId id = seg.at(i);
    if (id == 0) continue;
    auto it = mapping.find(id);
    out.at(i) = it == mapping.end() ? 0 : it->second;
  }
  return out;
}

RegroupResult regroup(const std::vector<LabelVolume>& sources, const std::vector<LabelVolume>& references) {
  if (sources.empty() || references.empty()) throw DataError("regroup: empty segmentation set");
  const ProbabilityAtlas src = probability_atlas(sources);
  const ProbabilityAtlas ref = probability_atlas(references);
  require_same_grid(src.max_prob.geometry(), ref.max_prob.geometry(), "regroup");

  std::map<LabelId, std::map<LabelId, std::size_t>> overlap;
  for (std::size_t i = 0; i < src.max_prob.data().size(); ++i) {
    const LabelId s = src.max_prob.at(i);
    const LabelId r = ref.max_prob.at(i);
    if (s != 0 && r != 0) ++overlap[s][r];
  }
  std::set<LabelId> source_ids;
  for (const auto& [id, _] : sources.front().names()) source_ids.insert(id);
  for (const auto& s : sources)
    for (LabelId id : s.present_labels()) source_ids.insert(id);

  RegroupResult res;
  for (LabelId s : source_ids) {
    LabelId best = 0;
    std::size_t best_n = 0;
    for (const auto& [r, n] : overlap[s])
      if (n > best_n) {
        best_n = n;
        best = r;
      }
    res.mapping[s] = best;
  }
  for (const auto& seg : sources) res.regrouped.push_back(apply_mapping(seg, res.mapping, references.front().names()));
  return res;
}

std::vector<int> hungarian_max(const Eigen::MatrixXd& weights) {
  const auto rows = static_cast<std::size_t>(weights.rows());
  const auto cols = static_cast<std::size_t>(weights.cols());
  const std::size_t n = std::max(rows, cols);
  if (n == 0) return {};
  const double top = weights.size() ? weights.maxCoeff() : 0.0;
  // Square cost matrix, padded with zero-weight entries; 1-based potentials.
  auto cost = [&](std::size_t i, std::size_t j) {
    const double w = (i < rows && j < cols) ? weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) : 0.0;
    return top - w;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> out(rows, -1);
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j] >= 1 && p[j] - 1 < rows && j - 1 < cols) out[p[j] - 1] = static_cast<int>(j - 1);
  return out;
}

LabelMatch match_labels(const LabelVolume& a, const LabelVolume& b) {
  require_same_grid(a.geometry(), b.geometry(), "match_labels");
  const auto la = a.present_labels();
  const auto lb = b.present_labels();
  std::map<LabelId, std::size_t> ia, ib;
  for (std::size_t i = 0; i < la.size(); ++i) ia[la[i]] = i;
  for (std::size_t j = 0; j < lb.size(); ++j) ib[lb[j]] = j;

  // One pass for all pairwise intersections and sizes.
  Eigen::MatrixXd inter = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(la.size()), static_cast<Eigen::Index>(lb.size()));
  std::vector<double> na(la.size(), 0), nb(lb.size(), 0);
  for (std::size_t v = 0; v < a.data().size(); ++v) {
    const LabelId x = a.at(v), y = b.at(v);
    if (x != 0) ++na[ia[x]];
    if (y != 0) ++nb[ib[y]];
    if (x != 0 && y != 0) inter(static_cast<Eigen::Index>(ia[x]), static_cast<Eigen::Index>(ib[y])) += 1;
  }
  Eigen::MatrixXd d(inter.rows(), inter.cols());
  for (Eigen::Index i = 0; i < d.rows(); ++i)
    for (Eigen::Index j = 0; j < d.cols(); ++j)
      d(i, j) = 2.0 * inter(i, j) / (na[static_cast<std::size_t>(i)] + nb[static_cast<std::size_t>(j)]);

  const auto assign = hungarian_max(d);
  LabelMatch m;
  std::vector<char> b_used(lb.size(), 0);
  for (std::size_t i = 0; i < la.size(); ++i) {
    const int j = assign[i];
    if (j >= 0 && d(static_cast<Eigen::Index>(i), j) > 0) {
      m.mapping[la[i]] = lb[static_cast<std::size_t>(j)];
      m.total_dice += d(static_cast<Eigen::Index>(i), j);
      b_used[static_cast<std::size_t>(j)] = 1;
    } else {
      m.unmatched_a.push_back(la[i]);
    }
  }
  for (std::size_t j = 0; j < lb.size(); ++j)
    if (!b_used[j]) m.unmatched_b.push_back(lb[j]);
  return m;
}

double matched_mean_dice(const LabelVolume& a, const LabelVolume& b) {
  const auto n = b.present_labels().size();
  if (n == 0) return 0.0;
  return match_labels(a, b).total_dice / static_cast<double>(n);
}

namespace {

CellStat summarize(const std::vector<double>& v) {
  CellStat s;
  s.n = v.size();
  if (v.empty()) return s;
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  s.mean = mean;
  if (v.size() >= 2) {
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

std::string fmt(const std::optional<double>& x, int precision) {
  if (!x) return {};
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << *x;
  return os.str();
}

std::optional<double> parse_cell(const std::string& s) {
  if (s.find_first_not_of(" \t") == std::string::npos) return std::nullopt;
  return std::stod(s);
}

}  // namespace

MetricsTable emit_table(const std::vector<ScoreRecord>& records, const LabelDictionary& names) {
  if (records.empty()) throw DataError("emit_table: no score records");
  struct Acc {
    std::vector<double> dice_l, dice_r, vsi_l, vsi_r;
    std::set<std::string> contributing;
    std::map<std::string, double> volume;  // per subject, summed over sides
  };
  std::map<LabelId, Acc> acc;
  for (const auto& [id, _] : names) acc[id];
  for (const auto& r : records) {
    Acc& a = acc[r.score.nucleus];
    const bool left = r.side == Side::left;
    if (r.score.dice) (left ? a.dice_l : a.dice_r).push_back(*r.score.dice);
    if (r.score.vsi) (left ? a.vsi_l : a.vsi_r).push_back(*r.score.vsi);
    if (r.score.dice || r.score.vsi) a.contributing.insert(r.subject);
    a.volume[r.subject] += r.reference_volume;
  }

  MetricsTable t;
  for (const auto& [id, a] : acc) {
    TableRow row;
    row.id = id;
    auto it = names.find(id);
    row.nucleus = it == names.end() ? std::to_string(id) : it->second;
    row.dice_l = summarize(a.dice_l);
    row.dice_r = summarize(a.dice_r);
    row.vsi_l = summarize(a.vsi_l);
    row.vsi_r = summarize(a.vsi_r);
    row.n = a.contributing.size();
    double vol = 0;
    for (const auto& [_, v] : a.volume) vol += v;
    row.mean_reference_volume = a.volume.empty() ? 0.0 : vol / static_cast<double>(a.volume.size());
    t.rows.push_back(std::move(row));
  }
  std::stable_sort(t.rows.begin(), t.rows.end(), [](const TableRow& x, const TableRow& y) {
    return x.mean_reference_volume > y.mean_reference_volume;
  });
  return t;
}

const char* MetricsTable::header() {
  return "nucleus,dice_L_mean,dice_L_sd,dice_R_mean,dice_R_sd,vsi_L_mean,vsi_L_sd,vsi_R_mean,vsi_R_sd,n";
}

std::string MetricsTable::to_csv(int precision) const {
  std::ostringstream os;
  os << header() << '\n';
  for (const auto& r : rows) {
    os << r.nucleus;
    for (const CellStat* c : {&r.dice_l, &r.dice_r, &r.vsi_l, &r.vsi_r})
      os << ',' << fmt(c->mean, precision) << ',' << fmt(c->sd, precision);
    os << ',' << r.n << '\n';
  }
  return os.str();
}

void MetricsTable::write_csv(const std::string& path, int precision) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot create " + path);
  os << to_csv(precision);
}

MetricsTable MetricsTable::parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != header()) throw DataError("metrics CSV: unexpected header");
  MetricsTable t;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      f.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (f.size() != 10) throw DataError("metrics CSV: expected 10 fields, got " + std::to_string(f.size()));
    TableRow r;
    r.nucleus = f[0];
    CellStat* cells[] = {&r.dice_l, &r.dice_r, &r.vsi_l, &r.vsi_r};
    for (int c = 0; c < 4; ++c) {
      cells[c]->mean = parse_cell(f[static_cast<std::size_t>(1 + 2 * c)]);
      cells[c]->sd = parse_cell(f[static_cast<std::size_t>(2 + 2 * c)]);
    }
    r.n = static_cast<std::size_t>(std::stoul(f[9]));
    t.rows.push_back(std::move(r));
  }
  return t;
}

}  // namespace parcelbench
