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

/// Voxel grids, geometry and label containers shared by every pipeline stage.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace parcelbench {

/// Raised when a container is built with inconsistent fields or two
/// containers that must share a grid do not.
class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Index3 = std::array<std::int64_t, 3>;

/// Homogeneous voxel-index to world-mm transform.
class Affine {
 public:
  Affine();
  explicit Affine(const Eigen::Matrix4d& m);

  static Affine from_spacing(const std::array<double, 3>& spacing,
                             const Eigen::Vector3d& origin = Eigen::Vector3d::Zero());

  const Eigen::Matrix4d& matrix() const { return m_; }
  Affine inverse() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const;
  std::array<double, 3> column_norms() const;

  bool operator==(const Affine& o) const { return m_ == o.m_; }

 private:
  Eigen::Matrix4d m_;
};

Eigen::Vector3d voxel_to_world(const Affine& a, const Index3& idx);
/// Continuous voxel coordinates of a world point.
Eigen::Vector3d world_to_voxel(const Affine& a, const Eigen::Vector3d& p);

/// Spatial part of a grid: extent, voxel size and placement.
struct Geometry {
  std::array<std::size_t, 3> dims{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  Affine affine;

  /// Axis-aligned grid with the given voxel size, voxel (0,0,0) at `origin`.
  static Geometry make(const std::array<std::size_t, 3>& dims,
                       const std::array<double, 3>& spacing,
                       const Eigen::Vector3d& origin = Eigen::Vector3d::Zero());

  std::size_t num_voxels() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t linear(std::size_t i, std::size_t j, std::size_t k) const {
    return i + dims[0] * (j + dims[1] * k);
  }
  Index3 unravel(std::size_t lin) const;
  bool contains(const Index3& idx) const;
  Eigen::Vector3d world(std::size_t lin) const;

  /// Throws GeometryError when dims, spacing or affine are inconsistent.
  void validate() const;
  bool operator==(const Geometry& o) const {
    return dims == o.dims && spacing == o.spacing && affine == o.affine;
  }
};

void require_same_grid(const Geometry& a, const Geometry& b, const std::string& what);

/// On-disk sample type.
enum class DataType : std::int16_t { uint8 = 2, int16 = 4, float32 = 16 };

/// Real-valued 3D or 4D grid. Data is x-fastest, then y, z, t.
class Volume {
 public:
  Volume() = default;
  Volume(Geometry g, std::size_t nt = 1, DataType dtype = DataType::float32);
  Volume(Geometry g, std::size_t nt, std::vector<double> data,
         DataType dtype = DataType::float32);

  const Geometry& geometry() const { return geom_; }
  std::size_t nt() const { return nt_; }
  /// 3 for a single frame, 4 otherwise (or when forced by set_ndim).
  int ndim() const { return ndim_; }
  void set_ndim(int n);
  DataType dtype() const { return dtype_; }
  void set_dtype(DataType d) { dtype_ = d; }
  /// Frame interval stored in the header's fourth pixdim (seconds).
  double time_step() const { return time_step_; }
  void set_time_step(double s) { time_step_ = s; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  std::span<const double> frame(std::size_t t) const;
  std::span<double> frame(std::size_t t);

  double at(std::size_t lin, std::size_t t = 0) const {
    return data_[lin + t * geom_.num_voxels()];
  }
  double& at(std::size_t lin, std::size_t t = 0) {
    return data_[lin + t * geom_.num_voxels()];
  }

  bool operator==(const Volume& o) const = default;

 private:
  Geometry geom_;
  std::size_t nt_ = 1;
  int ndim_ = 3;
  DataType dtype_ = DataType::float32;
  double time_step_ = 0.0;
  std::vector<double> data_;
};

using LabelId = std::int32_t;
using LabelDictionary = std::map<LabelId, std::string>;

/// The eleven nuclei, ids 1..11 in abbreviation order: AV, CM, Hb, LGN, MGN,
/// Md, Pul, VA, VL, VLa, VPL.
const LabelDictionary& nucleus_dictionary();
/// Ids 1..n named "<prefix><id>".
LabelDictionary numeric_dictionary(LabelId n, const std::string& prefix = "C");

/// Integer-coded grid with an id → name dictionary. Id 0 is background.
class LabelVolume {
 public:
  LabelVolume() = default;
  LabelVolume(Geometry g, LabelDictionary names);
  LabelVolume(Geometry g, std::vector<LabelId> ids, LabelDictionary names);

  const Geometry& geometry() const { return geom_; }
  std::span<const LabelId> data() const { return ids_; }
  std::span<LabelId> data() { return ids_; }
  LabelId at(std::size_t lin) const { return ids_[lin]; }
  LabelId& at(std::size_t lin) { return ids_[lin]; }

  const LabelDictionary& names() const { return names_; }
  void set_names(LabelDictionary names) { names_ = std::move(names); }
  std::string name_of(LabelId id) const;

  /// Nonzero ids with at least one voxel, ascending.
  std::vector<LabelId> present_labels() const;
  std::size_t count(LabelId id) const;
  LabelId max_label() const;

  /// Throws GeometryError if a nonzero id is missing from the dictionary.
  void validate() const;

  bool operator==(const LabelVolume& o) const = default;

 private:
  Geometry geom_;
  std::vector<LabelId> ids_;
  LabelDictionary names_;
};

/// Binary region of interest.
class Mask {
 public:
  Mask() = default;
  explicit Mask(Geometry g);
  Mask(Geometry g, std::vector<std::uint8_t> on);

  /// Nonzero voxels of a label volume.
  static Mask from_labels(const LabelVolume& lv);

  const Geometry& geometry() const { return geom_; }
  std::span<const std::uint8_t> data() const { return on_; }
  std::span<std::uint8_t> data() { return on_; }
  bool at(std::size_t lin) const { return on_[lin] != 0; }
  void set(std::size_t lin, bool v) { on_[lin] = v ? 1 : 0; }

  std::size_t count() const;
  /// Linear indices of the voxels that are on, ascending.
  std::vector<std::size_t> voxels() const;

  bool operator==(const Mask& o) const = default;

 private:
  Geometry geom_;
  std::vector<std::uint8_t> on_;
};

/// Nearest-voxel-center label resampling; equidistant ties go to the lower
/// source index and target voxels outside the source become background.
LabelVolume resample_nearest(const LabelVolume& src, const Geometry& target);
Mask resample_nearest(const Mask& src, const Geometry& target);

/// Trilinear resampling of every frame; samples outside the source's voxel
/// centers are 0.
Volume trilinear_resample(const Volume& src, const Geometry& target);

}  // namespace parcelbench
