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
#include "parcelbench/volume.hpp"

#include <algorithm>
#include <cmath>

namespace parcelbench {

Affine::Affine() : m_(Eigen::Matrix4d::Identity()) {}

Affine::Affine(const Eigen::Matrix4d& m) : m_(m) {
  if (m(3, 0) != 0.0 || m(3, 1) != 0.0 || m(3, 2) != 0.0 || m(3, 3) != 1.0)
    throw GeometryError("affine bottom row must be [0 0 0 1]");
  if (!m.allFinite())
    throw GeometryError("affine has non-finite entries");
  if (m.topLeftCorner<3, 3>().determinant() == 0.0)
    throw GeometryError("affine 3x3 block is singular");
}

Affine Affine::from_spacing(const std::array<double, 3>& spacing,
                            const Eigen::Vector3d& origin) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  for (int i = 0; i < 3; ++i) {
    m(i, i) = spacing[i];
    m(i, 3) = origin[i];
  }
  return Affine(m);
}

Affine Affine::inverse() const {
  Eigen::Matrix4d inv = Eigen::Matrix4d::Identity();
  const Eigen::Matrix3d r = m_.topLeftCorner<3, 3>().inverse();
  inv.topLeftCorner<3, 3>() = r;
  inv.topRightCorner<3, 1>() = -r * m_.topRightCorner<3, 1>();
  return Affine(inv);
}

Eigen::Vector3d Affine::apply(const Eigen::Vector3d& p) const {
  return m_.topLeftCorner<3, 3>() * p + m_.topRightCorner<3, 1>();
}

std::array<double, 3> Affine::column_norms() const {
  return {m_.block<3, 1>(0, 0).norm(), m_.block<3, 1>(0, 1).norm(),
          m_.block<3, 1>(0, 2).norm()};
}

Eigen::Vector3d voxel_to_world(const Affine& a, const Index3& idx) {
  return a.apply(Eigen::Vector3d(static_cast<double>(idx[0]), static_cast<double>(idx[1]),
                                 static_cast<double>(idx[2])));
}

Eigen::Vector3d world_to_voxel(const Affine& a, const Eigen::Vector3d& p) {
  const Eigen::Matrix4d& m = a.matrix();
  return m.topLeftCorner<3, 3>().partialPivLu().solve(p - m.topRightCorner<3, 1>());
}

Geometry Geometry::make(const std::array<std::size_t, 3>& dims,
                        const std::array<double, 3>& spacing,
                        const Eigen::Vector3d& origin) {
  Geometry g;
  g.dims = dims;
  g.spacing = spacing;
  g.affine = Affine::from_spacing(spacing, origin);
  g.validate();
  return g;
}

Index3 Geometry::unravel(std::size_t lin) const {
  const std::size_t i = lin % dims[0];
  const std::size_t rest = lin / dims[0];
  return {static_cast<std::int64_t>(i), static_cast<std::int64_t>(rest % dims[1]),
          static_cast<std::int64_t>(rest / dims[1])};
}

bool Geometry::contains(const Index3& idx) const {
  for (int a = 0; a < 3; ++a)
    if (idx[a] < 0 || idx[a] >= static_cast<std::int64_t>(dims[a])) return false;
  return true;
}

Eigen::Vector3d Geometry::world(std::size_t lin) const {
  return voxel_to_world(affine, unravel(lin));
}

void Geometry::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) throw GeometryError("grid dimension must be >= 1");
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
      throw GeometryError("voxel spacing must be strictly positive");
  }
  const auto norms = affine.column_norms();
  for (int a = 0; a < 3; ++a)
    if (std::abs(norms[a] - spacing[a]) > 1e-4 * spacing[a])
      throw GeometryError("spacing disagrees with affine column norm on axis " +
                          std::to_string(a));
}

void require_same_grid(const Geometry& a, const Geometry& b, const std::string& what) {
  if (a.dims != b.dims || !(a.affine == b.affine))
    throw GeometryError(what + ": grids differ");
}

Volume::Volume(Geometry g, std::size_t nt, DataType dtype)
    : Volume(g, nt, std::vector<double>(g.num_voxels() * nt, 0.0), dtype) {}

Volume::Volume(Geometry g, std::size_t nt, std::vector<double> data, DataType dtype)
    : geom_(std::move(g)), nt_(nt), ndim_(nt > 1 ? 4 : 3), dtype_(dtype),
      data_(std::move(data)) {
  geom_.validate();
  if (nt_ < 1) throw GeometryError("volume needs at least one frame");
  if (data_.size() != geom_.num_voxels() * nt_)
    throw GeometryError("volume data length does not match dims");
}

void Volume::set_ndim(int n) {
  if (n != 3 && n != 4) throw GeometryError("ndim must be 3 or 4");
  if (n == 3 && nt_ > 1) throw GeometryError("multi-frame volume cannot be 3D");
  ndim_ = n;
}

std::span<const double> Volume::frame(std::size_t t) const {
  return std::span<const double>(data_).subspan(t * geom_.num_voxels(), geom_.num_voxels());
}

std::span<double> Volume::frame(std::size_t t) {
  return std::span<double>(data_).subspan(t * geom_.num_voxels(), geom_.num_voxels());
}

const LabelDictionary& nucleus_dictionary() {
  static const LabelDictionary dict = {
      {1, "AV"}, {2, "CM"},  {3, "Hb"}, {4, "LGN"}, {5, "MGN"},  {6, "Md"},
      {7, "Pul"}, {8, "VA"}, {9, "VL"}, {10, "VLa"}, {11, "VPL"}};
  return dict;
}

LabelDictionary numeric_dictionary(LabelId n, const std::string& prefix) {
  LabelDictionary d;
  for (LabelId i = 1; i <= n; ++i) d[i] = prefix + std::to_string(i);
  return d;
}

LabelVolume::LabelVolume(Geometry g, LabelDictionary names)
    : LabelVolume(g, std::vector<LabelId>(g.num_voxels(), 0), std::move(names)) {}

LabelVolume::LabelVolume(Geometry g, std::vector<LabelId> ids, LabelDictionary names)
    : geom_(std::move(g)), ids_(std::move(ids)), names_(std::move(names)) {
  geom_.validate();
  if (ids_.size() != geom_.num_voxels())
    throw GeometryError("label data length does not match dims");
  names_.erase(0);
}

std::string LabelVolume::name_of(LabelId id) const {
  if (id == 0) return "background";
  auto it = names_.find(id);
  return it == names_.end() ? std::to_string(id) : it->second;
}

std::vector<LabelId> LabelVolume::present_labels() const {
  std::vector<LabelId> out;
  std::vector<LabelId> sorted(ids_);
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (LabelId id : sorted)
    if (id != 0) out.push_back(id);
  return out;
}

std::size_t LabelVolume::count(LabelId id) const {
  return static_cast<std::size_t>(std::count(ids_.begin(), ids_.end(), id));
}

LabelId LabelVolume::max_label() const {
  return ids_.empty() ? 0 : *std::max_element(ids_.begin(), ids_.end());
}

void LabelVolume::validate() const {
  for (LabelId id : present_labels()) {
    if (id < 0) throw GeometryError("negative label id " + std::to_string(id));
    if (!names_.contains(id))
      throw GeometryError("label id " + std::to_string(id) + " missing from dictionary");
  }
}

Mask::Mask(Geometry g) : Mask(g, std::vector<std::uint8_t>(g.num_voxels(), 0)) {}

Mask::Mask(Geometry g, std::vector<std::uint8_t> on) : geom_(std::move(g)), on_(std::move(on)) {
  geom_.validate();
  if (on_.size() != geom_.num_voxels())
    throw GeometryError("mask data length does not match dims");
  for (auto& v : on_)
    if (v > 1) throw GeometryError("mask values must be 0 or 1");
}

Mask Mask::from_labels(const LabelVolume& lv) {
  std::vector<std::uint8_t> on(lv.data().size());
  std::transform(lv.data().begin(), lv.data().end(), on.begin(),
                 [](LabelId id) { return static_cast<std::uint8_t>(id != 0); });
  return Mask(lv.geometry(), std::move(on));
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(on_.begin(), on_.end(), std::uint8_t{1}));
}

std::vector<std::size_t> Mask::voxels() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < on_.size(); ++i)
    if (on_[i]) out.push_back(i);
  return out;
}

namespace {

// Maps each target voxel to the linear index of its nearest source voxel, or
// -1 when that lies outside the source grid. ceil(x - 0.5) sends exact
// half-way points to the lower index.
std::vector<std::int64_t> nearest_map(const Geometry& src, const Geometry& target) {
  const Eigen::Matrix4d m = src.affine.inverse().matrix() * target.affine.matrix();
  std::vector<std::int64_t> out(target.num_voxels(), -1);
  for (std::size_t lin = 0; lin < out.size(); ++lin) {
    const Index3 t = target.unravel(lin);
    const Eigen::Vector4d p = m * Eigen::Vector4d(static_cast<double>(t[0]),
                                                  static_cast<double>(t[1]),
                                                  static_cast<double>(t[2]), 1.0);
    Index3 s;
    for (int a = 0; a < 3; ++a) s[a] = static_cast<std::int64_t>(std::ceil(p[a] - 0.5));
    if (src.contains(s))
      out[lin] = static_cast<std::int64_t>(
          src.linear(static_cast<std::size_t>(s[0]), static_cast<std::size_t>(s[1]),
                     static_cast<std::size_t>(s[2])));
  }
  return out;
}

}  // namespace

LabelVolume resample_nearest(const LabelVolume& src, const Geometry& target) {
  target.validate();
  const auto map = nearest_map(src.geometry(), target);
  std::vector<LabelId> ids(target.num_voxels(), 0);
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (map[i] >= 0) ids[i] = src.at(static_cast<std::size_t>(map[i]));
  return LabelVolume(target, std::move(ids), src.names());
}

Mask resample_nearest(const Mask& src, const Geometry& target) {
  target.validate();
  const auto map = nearest_map(src.geometry(), target);
  std::vector<std::uint8_t> on(target.num_voxels(), 0);
  for (std::size_t i = 0; i < on.size(); ++i)
    if (map[i] >= 0) on[i] = src.data()[static_cast<std::size_t>(map[i])];
  return Mask(target, std::move(on));
}

Volume trilinear_resample(const Volume& src, const Geometry& target) {
  target.validate();
  const Geometry& sg = src.geometry();
  const Eigen::Matrix4d m = sg.affine.inverse().matrix() * target.affine.matrix();
  constexpr double kEdge = 1e-9;
  Volume out(target, src.nt(), src.dtype());
  out.set_ndim(src.ndim());
  out.set_time_step(src.time_step());

  for (std::size_t lin = 0; lin < target.num_voxels(); ++lin) {
    const Index3 t = target.unravel(lin);
    const Eigen::Vector4d p = m * Eigen::Vector4d(static_cast<double>(t[0]),
                                                  static_cast<double>(t[1]),
                                                  static_cast<double>(t[2]), 1.0);
    std::array<std::size_t, 3> lo{};
    std::array<double, 3> frac{};
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      const double hi = static_cast<double>(sg.dims[a] - 1);
      double x = p[a];
      if (x < -kEdge || x > hi + kEdge) {
        inside = false;
        break;
      }
      x = std::clamp(x, 0.0, hi);
      double f = std::floor(x);
      if (f >= hi) f = std::max(hi - 1.0, 0.0);
      lo[a] = static_cast<std::size_t>(f);
      frac[a] = sg.dims[a] == 1 ? 0.0 : x - f;
    }
    if (!inside) continue;

    std::array<std::size_t, 8> corner{};
    std::array<double, 8> weight{};
    for (int c = 0; c < 8; ++c) {
      std::array<std::size_t, 3> idx{};
      double w = 1.0;
      for (int a = 0; a < 3; ++a) {
        const bool up = (c >> a) & 1;
        idx[a] = std::min(lo[a] + (up ? 1 : 0), sg.dims[a] - 1);
        w *= up ? frac[a] : 1.0 - frac[a];
      }
      corner[c] = sg.linear(idx[0], idx[1], idx[2]);
      weight[c] = w;
    }
    for (std::size_t f = 0; f < src.nt(); ++f) {
      double v = 0.0;
      for (int c = 0; c < 8; ++c)
        if (weight[c] != 0.0) v += weight[c] * src.at(corner[c], f);
      out.at(lin, f) = v;
    }
  }
  return out;
}

}  // namespace parcelbench
