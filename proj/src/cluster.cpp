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
#include "parcelbench/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "parcelbench/errors.hpp"
#include "parcelbench/parallel.hpp"
#include "parcelbench/random.hpp"

namespace parcelbench {

FeatureSet build_features(const ShField& field, double alpha) {
  if (field.size() == 0) throw DataError("build_features: empty field");
  if (!(alpha >= 0)) throw DataError("build_features: alpha must be >= 0");
  FeatureSet fs;
  fs.voxels = field.mask.voxels();
  fs.geometry = field.geometry();
  fs.alpha = alpha;
  const Eigen::Index nc = field.coeffs.cols();
  fs.points.resize(3 + nc, static_cast<Eigen::Index>(fs.voxels.size()));
  for (std::size_t i = 0; i < fs.voxels.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    fs.points.block(0, col, 3, 1) = fs.geometry.world(fs.voxels[i]);
    fs.points.block(3, col, nc, 1) = alpha * field.coeffs.row(col).transpose();
  }
  return fs;
}

void KMeansConfig::validate() const {
  if (k < 1) throw DataError("k-means: k must be >= 1");
  if (n_restarts < 1) throw DataError("k-means: n_restarts must be >= 1");
  if (max_iter < 1) throw DataError("k-means: max_iter must be >= 1");
  if (!(tol >= 0)) throw DataError("k-means: tol must be >= 0");
}

namespace {

// Squared distances of every point to every centroid (k x n) via the
// expansion |x|^2 - 2 c.x + |c|^2; only used to rank, never as inertia.
std::vector<int> nearest(const Eigen::MatrixXd& x, const Eigen::VectorXd& x_sq,
                         const Eigen::MatrixXd& c) {
  const Eigen::VectorXd c_sq = c.colwise().squaredNorm().transpose();
  const Eigen::MatrixXd cross = c.transpose() * x;
  std::vector<int> a(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      const double d = x_sq[i] - 2.0 * cross(j, i) + c_sq[j];
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(j);
      }
    }
    a[static_cast<std::size_t>(i)] = best;
  }
  return a;
}

double sq_dist(const Eigen::MatrixXd& x, Eigen::Index i, const Eigen::MatrixXd& c, Eigen::Index j) {
  return (x.col(i) - c.col(j)).squaredNorm();
}

double inertia_of(const Eigen::MatrixXd& x, const std::vector<int>& a, const Eigen::MatrixXd& c) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i) s += sq_dist(x, i, c, a[static_cast<std::size_t>(i)]);
  return s;
}

// Gives every empty cluster the point farthest from its own centroid (taken
// from clusters with more than one member; lower index wins ties).
void repair_empty(const Eigen::MatrixXd& x, std::vector<int>& a, Eigen::MatrixXd& c) {
  const Eigen::Index k = c.cols();
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  for (int l : a) ++counts[static_cast<std::size_t>(l)];
  for (Eigen::Index j = 0; j < k; ++j) {
    if (counts[static_cast<std::size_t>(j)] != 0) continue;
    Eigen::Index far = -1;
    double far_d = -1.0;
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      const int l = a[static_cast<std::size_t>(i)];
      if (counts[static_cast<std::size_t>(l)] < 2) continue;
      const double d = sq_dist(x, i, c, l);
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    if (far < 0) break;
    --counts[static_cast<std::size_t>(a[static_cast<std::size_t>(far)])];
    a[static_cast<std::size_t>(far)] = static_cast<int>(j);
    ++counts[static_cast<std::size_t>(j)];
    c.col(j) = x.col(far);
  }
}

Eigen::MatrixXd means(const Eigen::MatrixXd& x, const std::vector<int>& a, const Eigen::MatrixXd& prev) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(x.rows(), prev.cols());
  std::vector<double> counts(static_cast<std::size_t>(prev.cols()), 0.0);
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    c.col(a[static_cast<std::size_t>(i)]) += x.col(i);
    counts[static_cast<std::size_t>(a[static_cast<std::size_t>(i)])] += 1.0;
  }
  for (Eigen::Index j = 0; j < c.cols(); ++j) {
    if (counts[static_cast<std::size_t>(j)] > 0)
      c.col(j) /= counts[static_cast<std::size_t>(j)];
    else
      c.col(j) = prev.col(j);
  }
  return c;
}

// k distinct-valued columns of x, drawn uniformly without replacement.
Eigen::MatrixXd random_init(const Eigen::MatrixXd& x, int k, Rng& rng) {
  const auto n = static_cast<std::size_t>(x.cols());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Eigen::MatrixXd c(x.rows(), k);
  int got = 0;
  for (std::size_t i = 0; i < n && got < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(order[i], order[pick(rng)]);
    const auto col = static_cast<Eigen::Index>(order[i]);
    bool dup = false;
    for (int j = 0; j < got && !dup; ++j) dup = (c.col(j) == x.col(col));
    if (!dup) c.col(got++) = x.col(col);
  }
  if (got < k) throw DataError("k-means: fewer distinct points than clusters");
  return c;
}

}  // namespace

std::vector<int> assign_nearest(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids) {
  const Eigen::VectorXd mu = points.rowwise().mean();
  const Eigen::MatrixXd x = points.colwise() - mu;
  const Eigen::MatrixXd c = centroids.colwise() - mu;
  return nearest(x, x.colwise().squaredNorm().transpose(), c);
}

KMeansResult kmeans_once(const Eigen::MatrixXd& points, const Eigen::MatrixXd& init, int max_iter,
                         double tol) {
  const Eigen::Index k = init.cols();
  if (k < 1) throw DataError("k-means: need at least one centroid");
  if (k > points.cols()) throw DataError("k-means: k exceeds the number of points");
  if (init.rows() != points.rows()) throw DataError("k-means: centroid dimension mismatch");
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i + 1; j < k; ++j)
      if (init.col(i) == init.col(j)) throw DataError("k-means: initial centroids are not distinct");

  // Work in mean-centred coordinates to keep the distance expansion accurate.
  const Eigen::VectorXd mu = points.rowwise().mean();
  const Eigen::MatrixXd x = points.colwise() - mu;
  const Eigen::VectorXd x_sq = x.colwise().squaredNorm().transpose();
  Eigen::MatrixXd c = init.colwise() - mu;

  KMeansResult res;
  std::vector<int> a = nearest(x, x_sq, c);
  repair_empty(x, a, c);
  res.inertia_trace.push_back(inertia_of(x, a, c));

  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd next = means(x, a, c);
    const double scale = std::max(c.norm(), std::numeric_limits<double>::min());
    const double moved = (next - c).norm() / scale;
    c = next;
    res.iterations = it + 1;
    std::vector<int> b = nearest(x, x_sq, c);
    repair_empty(x, b, c);
    res.inertia_trace.push_back(inertia_of(x, b, c));
    const bool same = (b == a);
    a = std::move(b);
    if (same || moved < tol) {
      res.converged = true;
      break;
    }
  }
  res.assignment = std::move(a);
  res.inertia = res.inertia_trace.back();
  res.centroids = c.colwise() + mu;
  return res;
}

Eigen::MatrixXd seed_by_restarts(const Eigen::MatrixXd& points, const KMeansConfig& cfg) {
  cfg.validate();
  const int k = cfg.k;
  if (k > points.cols()) throw DataError("k-means: k exceeds the number of points");
  const auto runs = static_cast<std::size_t>(cfg.n_restarts);
  Eigen::MatrixXd pooled(points.rows(), static_cast<Eigen::Index>(runs) * k);
  parallel_for(runs, [&](std::size_t r) {
    Rng rng = make_stream(cfg.seed, r);
    const Eigen::MatrixXd init = random_init(points, k, rng);
    const KMeansResult res = kmeans_once(points, init, cfg.max_iter, cfg.tol);
    pooled.middleCols(static_cast<Eigen::Index>(r) * k, k) = res.centroids;
  });
  if (runs == 1) return pooled;

  constexpr int kPoolStarts = 10;
  const std::uint64_t pool_seed = derive_seed(cfg.seed, 0x706f6f6cULL);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int s = 0; s < kPoolStarts; ++s) {
    Rng rng = make_stream(pool_seed, static_cast<std::uint64_t>(s));
    KMeansResult res = kmeans_once(pooled, random_init(pooled, k, rng), cfg.max_iter, cfg.tol);
    if (res.inertia < best.inertia) best = std::move(res);
  }
  return best.centroids;
}

LabelVolume segment_dti(const ShField& field, const KMeansConfig& cfg, double alpha,
                        Eigen::MatrixXd* final_centroids) {
  cfg.validate();
  const FeatureSet fs = build_features(field, alpha);
  const Eigen::MatrixXd seeds = seed_by_restarts(fs.points, cfg);
  const KMeansResult res = kmeans_once(fs.points, seeds, cfg.max_iter, cfg.tol);

  std::vector<std::size_t> size(static_cast<std::size_t>(cfg.k), 0);
  for (int l : res.assignment) ++size[static_cast<std::size_t>(l)];
  std::vector<int> order(static_cast<std::size_t>(cfg.k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const auto sa = size[static_cast<std::size_t>(a)], sb = size[static_cast<std::size_t>(b)];
    if (sa != sb) return sa > sb;
    return res.centroids(0, a) < res.centroids(0, b);
  });
  std::vector<LabelId> id_of(static_cast<std::size_t>(cfg.k));
  for (std::size_t rank = 0; rank < order.size(); ++rank)
    id_of[static_cast<std::size_t>(order[rank])] = static_cast<LabelId>(rank + 1);

  LabelVolume out(fs.geometry, numeric_dictionary(cfg.k, "C"));
  for (std::size_t i = 0; i < fs.voxels.size(); ++i)
    out.at(fs.voxels[i]) = id_of[static_cast<std::size_t>(res.assignment[i])];
  if (final_centroids) {
    final_centroids->resize(res.centroids.rows(), res.centroids.cols());
    for (int j = 0; j < cfg.k; ++j)
      final_centroids->col(id_of[static_cast<std::size_t>(j)] - 1) = res.centroids.col(j);
  }
  return out;
}

void write_centroids_csv(const Eigen::MatrixXd& centroids, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot create " + path);
  os.precision(10);
  os << "cluster";
  for (Eigen::Index r = 0; r < centroids.rows(); ++r)
    os << (r < 3 ? std::string(",") + "xyz"[r] : ",f" + std::to_string(r - 3));
  os << '\n';
  for (Eigen::Index j = 0; j < centroids.cols(); ++j) {
    os << j + 1;
    for (Eigen::Index r = 0; r < centroids.rows(); ++r) os << ',' << centroids(r, j);
    os << '\n';
  }
}

}  // namespace parcelbench
