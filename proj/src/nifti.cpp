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
#include "parcelbench/nifti.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <zlib.h>

namespace parcelbench {

static_assert(std::endian::native == std::endian::little,
              "NIfTI I/O assumes a little-endian host");

namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kVoxOffset = 352;

// Byte offsets of the NIfTI-1 header fields used here.
namespace off {
constexpr std::size_t sizeof_hdr = 0;
constexpr std::size_t dim = 40;
constexpr std::size_t datatype = 70;
constexpr std::size_t bitpix = 72;
constexpr std::size_t pixdim = 76;
constexpr std::size_t vox_offset = 108;
constexpr std::size_t scl_slope = 112;
constexpr std::size_t scl_inter = 116;
constexpr std::size_t xyzt_units = 123;
constexpr std::size_t descrip = 148;
constexpr std::size_t qform_code = 252;
constexpr std::size_t sform_code = 254;
constexpr std::size_t quatern_b = 256;
constexpr std::size_t qoffset_x = 268;
constexpr std::size_t srow_x = 280;
constexpr std::size_t magic = 344;
}  // namespace off

template <typename T>
T get(const std::vector<unsigned char>& buf, std::size_t pos) {
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  return v;
}

template <typename T>
void put(std::vector<unsigned char>& buf, std::size_t pos, T v) {
  std::memcpy(buf.data() + pos, &v, sizeof(T));
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<unsigned char> slurp(const std::string& path) {
  // gzread passes uncompressed files through unchanged.
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw NiftiError(NiftiError::Code::io, "file", "cannot open " + path);
  std::vector<unsigned char> out;
  std::vector<unsigned char> chunk(1 << 20);
  for (;;) {
    const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) {
      gzclose(f);
      throw NiftiError(NiftiError::Code::io, "file", "read failure in " + path);
    }
    if (n == 0) break;
    out.insert(out.end(), chunk.begin(), chunk.begin() + n);
  }
  gzclose(f);
  return out;
}

void dump(const std::string& path, const std::vector<unsigned char>& bytes) {
  if (ends_with(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "wb6");
    if (!f) throw NiftiError(NiftiError::Code::io, "file", "cannot create " + path);
    const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    if (gzclose(f) != Z_OK || n != static_cast<int>(bytes.size()))
      throw NiftiError(NiftiError::Code::io, "file", "write failure in " + path);
    return;
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw NiftiError(NiftiError::Code::io, "file", "cannot create " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw NiftiError(NiftiError::Code::io, "file", "write failure in " + path);
}

struct Parsed {
  Geometry geom;
  std::size_t nt = 1;
  int ndim = 3;
  DataType dtype = DataType::float32;
  double time_step = 0.0;
  std::vector<double> data;
};

Eigen::Matrix4d qform_matrix(const std::vector<unsigned char>& buf, const std::array<double, 3>& d,
                             double qfac) {
  const double b = get<float>(buf, off::quatern_b);
  const double c = get<float>(buf, off::quatern_b + 4);
  const double dd = get<float>(buf, off::quatern_b + 8);
  const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + dd * dd)));
  Eigen::Matrix3d r;
  r << a * a + b * b - c * c - dd * dd, 2 * (b * c - a * dd), 2 * (b * dd + a * c),
      2 * (b * c + a * dd), a * a + c * c - b * b - dd * dd, 2 * (c * dd - a * b),
      2 * (b * dd - a * c), 2 * (c * dd + a * b), a * a + dd * dd - c * c - b * b;
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = r * Eigen::Vector3d(d[0], d[1], qfac * d[2]).asDiagonal();
  for (int i = 0; i < 3; ++i) m(i, 3) = get<float>(buf, off::qoffset_x + 4 * i);
  return m;
}

Parsed parse(const std::vector<unsigned char>& buf) {
  using C = NiftiError::Code;
  if (buf.size() < kHeaderSize) throw NiftiError(C::truncated, "header", "file shorter than 348 bytes");

  const auto sizeof_hdr = get<std::int32_t>(buf, off::sizeof_hdr);
  if (sizeof_hdr != 348) {
    if (__builtin_bswap32(static_cast<std::uint32_t>(sizeof_hdr)) == 348u)
      throw NiftiError(C::big_endian, "sizeof_hdr", "big-endian files are not supported");
    throw NiftiError(C::bad_sizeof_hdr, "sizeof_hdr", "expected 348, got " + std::to_string(sizeof_hdr));
  }
  if (std::memcmp(buf.data() + off::magic, "n+1\0", 4) != 0)
    throw NiftiError(C::bad_magic, "magic", "expected single-file magic \"n+1\"");

  Parsed p;
  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = get<std::int16_t>(buf, off::dim + 2 * i);
  if (dim[0] < 1 || dim[0] > 7) throw NiftiError(C::bad_dims, "dim", "dim[0] out of range");
  for (int i = 1; i <= dim[0]; ++i)
    if (dim[i] < 1) throw NiftiError(C::bad_dims, "dim", "dim[" + std::to_string(i) + "] < 1");
  for (int i = 5; i <= dim[0]; ++i)
    if (dim[i] > 1) throw NiftiError(C::bad_dims, "dim", "more than four dimensions");
  auto dim_at = [&](int i) -> std::size_t { return i <= dim[0] ? static_cast<std::size_t>(dim[i]) : 1; };

  const auto datatype = get<std::int16_t>(buf, off::datatype);
  std::size_t bytes_per = 0;
  switch (datatype) {
    case 2: p.dtype = DataType::uint8; bytes_per = 1; break;
    case 4: p.dtype = DataType::int16; bytes_per = 2; break;
    case 16: p.dtype = DataType::float32; bytes_per = 4; break;
    default:
      throw NiftiError(C::unsupported_datatype, "datatype",
                       "datatype code " + std::to_string(datatype) + " not supported");
  }

  std::array<float, 8> pixdim{};
  for (int i = 0; i < 8; ++i) pixdim[i] = get<float>(buf, off::pixdim + 4 * i);

  p.geom.dims = {dim_at(1), dim_at(2), dim_at(3)};
  p.nt = dim_at(4);
  p.ndim = dim[0] >= 4 ? 4 : 3;
  std::array<double, 3> pix{};
  for (int a = 0; a < 3; ++a) pix[a] = std::abs(static_cast<double>(pixdim[a + 1]));
  p.time_step = p.ndim == 4 ? static_cast<double>(pixdim[4]) : 0.0;

  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  const auto sform_code = get<std::int16_t>(buf, off::sform_code);
  const auto qform_code = get<std::int16_t>(buf, off::qform_code);
  bool have_affine = false;
  if (sform_code > 0) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) m(r, c) = get<float>(buf, off::srow_x + 16 * r + 4 * c);
    have_affine = m.topLeftCorner<3, 3>().determinant() != 0.0;
  }
  if (!have_affine && qform_code > 0) {
    std::array<double, 3> d = pix;
    for (auto& x : d)
      if (!(x > 0)) x = 1.0;
    m = qform_matrix(buf, d, pixdim[0] < 0 ? -1.0 : 1.0);
    have_affine = true;
  }
  if (!have_affine) {
    m = Eigen::Matrix4d::Identity();
    for (int a = 0; a < 3; ++a) m(a, a) = pix[a] > 0 ? pix[a] : 1.0;
  }
  p.geom.affine = Affine(m);
  const auto norms = p.geom.affine.column_norms();
  for (int a = 0; a < 3; ++a)
    p.geom.spacing[a] =
        (pix[a] > 0 && std::abs(norms[a] - pix[a]) <= 1e-4 * pix[a]) ? pix[a] : norms[a];

  const auto vox_offset = static_cast<std::size_t>(get<float>(buf, off::vox_offset));
  if (vox_offset < kHeaderSize)
    throw NiftiError(C::bad_dims, "vox_offset", "vox_offset inside header");
  const std::size_t n = p.geom.num_voxels() * p.nt;
  if (buf.size() < vox_offset + n * bytes_per)
    throw NiftiError(C::truncated, "vox_offset", "data section shorter than dims require");

  double slope = get<float>(buf, off::scl_slope);
  double inter = get<float>(buf, off::scl_inter);
  const bool scale = std::isfinite(slope) && slope != 0.0 && !(slope == 1.0 && inter == 0.0);

  p.data.resize(n);
  const unsigned char* src = buf.data() + vox_offset;
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0;
    switch (p.dtype) {
      case DataType::uint8: v = src[i]; break;
      case DataType::int16: {
        std::int16_t s;
        std::memcpy(&s, src + 2 * i, 2);
        v = s;
        break;
      }
      case DataType::float32: {
        float f;
        std::memcpy(&f, src + 4 * i, 4);
        v = f;
        break;
      }
    }
    p.data[i] = scale ? v * slope + inter : v;
  }
  if (scale) p.dtype = DataType::float32;
  return p;
}

std::vector<unsigned char> header(const Geometry& g, std::size_t nt, int ndim, DataType dtype,
                                  double time_step) {
  using C = NiftiError::Code;
  for (auto d : g.dims)
    if (d > static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max()))
      throw NiftiError(C::out_of_range, "dim", "dimension exceeds int16 header range");
  if (nt > static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max()))
    throw NiftiError(C::out_of_range, "dim", "frame count exceeds int16 header range");

  std::vector<unsigned char> buf(kVoxOffset, 0);
  put<std::int32_t>(buf, off::sizeof_hdr, 348);
  std::array<std::int16_t, 8> dim{static_cast<std::int16_t>(ndim), 1, 1, 1, 1, 1, 1, 1};
  for (int a = 0; a < 3; ++a) dim[a + 1] = static_cast<std::int16_t>(g.dims[a]);
  if (ndim == 4) dim[4] = static_cast<std::int16_t>(nt);
  for (int i = 0; i < 8; ++i) put<std::int16_t>(buf, off::dim + 2 * i, dim[i]);

  const auto code = static_cast<std::int16_t>(dtype);
  put<std::int16_t>(buf, off::datatype, code);
  put<std::int16_t>(buf, off::bitpix,
                    static_cast<std::int16_t>(dtype == DataType::uint8 ? 8 : dtype == DataType::int16 ? 16 : 32));
  std::array<float, 8> pixdim{1.0f, 1.0f, 1.0f, 1.0f, 0.0f, 0.0f, 0.0f, 0.0f};
  for (int a = 0; a < 3; ++a) pixdim[a + 1] = static_cast<float>(g.spacing[a]);
  pixdim[4] = static_cast<float>(time_step);
  for (int i = 0; i < 8; ++i) put<float>(buf, off::pixdim + 4 * i, pixdim[i]);

  put<float>(buf, off::vox_offset, static_cast<float>(kVoxOffset));
  put<float>(buf, off::scl_slope, 1.0f);
  put<float>(buf, off::scl_inter, 0.0f);
  buf[off::xyzt_units] = 2 | 8;  // mm, s
  const char descrip[] = "parcelbench";
  std::memcpy(buf.data() + off::descrip, descrip, sizeof(descrip));
  put<std::int16_t>(buf, off::qform_code, 0);
  put<std::int16_t>(buf, off::sform_code, 1);
  const Eigen::Matrix4d& m = g.affine.matrix();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) put<float>(buf, off::srow_x + 16 * r + 4 * c, static_cast<float>(m(r, c)));
  std::memcpy(buf.data() + off::magic, "n+1\0", 4);
  return buf;
}

void append_samples(std::vector<unsigned char>& buf, std::span<const double> data, DataType dtype) {
  using C = NiftiError::Code;
  const std::size_t start = buf.size();
  switch (dtype) {
    case DataType::uint8:
      buf.resize(start + data.size());
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double r = std::round(data[i]);
        if (r < 0 || r > 255) throw NiftiError(C::out_of_range, "datatype", "value does not fit uint8");
        buf[start + i] = static_cast<unsigned char>(r);
      }
      break;
    case DataType::int16:
      buf.resize(start + 2 * data.size());
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double r = std::round(data[i]);
        if (r < std::numeric_limits<std::int16_t>::min() || r > std::numeric_limits<std::int16_t>::max())
          throw NiftiError(C::out_of_range, "datatype", "value does not fit int16");
        const auto s = static_cast<std::int16_t>(r);
        std::memcpy(buf.data() + start + 2 * i, &s, 2);
      }
      break;
    case DataType::float32:
      buf.resize(start + 4 * data.size());
      for (std::size_t i = 0; i < data.size(); ++i) {
        const auto f = static_cast<float>(data[i]);
        std::memcpy(buf.data() + start + 4 * i, &f, 4);
      }
      break;
  }
}

}  // namespace

NiftiError::NiftiError(Code code, std::string field, const std::string& detail)
    : std::runtime_error("nifti " + field + ": " + detail), code_(code), field_(std::move(field)) {}

Volume read_nifti(const std::string& path) {
  Parsed p = parse(slurp(path));
  try {
    Volume v(p.geom, p.nt, std::move(p.data), p.dtype);
    v.set_ndim(p.ndim);
    v.set_time_step(p.time_step);
    return v;
  } catch (const GeometryError& e) {
    throw NiftiError(NiftiError::Code::bad_dims, "pixdim", e.what());
  }
}

LabelDictionary dictionary_for(const std::vector<LabelId>& ids, LabelScheme scheme) {
  LabelDictionary d;
  const auto& nuclei = nucleus_dictionary();
  for (LabelId id : ids) {
    if (id == 0) continue;
    if (scheme == LabelScheme::nuclei && nuclei.contains(id))
      d[id] = nuclei.at(id);
    else
      d[id] = (scheme == LabelScheme::nuclei ? "L" : "C") + std::to_string(id);
  }
  return d;
}

LabelVolume read_label_nifti(const std::string& path, LabelScheme scheme) {
  Volume v = read_nifti(path);
  if (v.dtype() == DataType::float32)
    throw NiftiError(NiftiError::Code::unsupported_datatype, "datatype",
                     "label files must use an integer datatype");
  if (v.nt() != 1) throw NiftiError(NiftiError::Code::bad_dims, "dim", "label files must be 3D");
  std::vector<LabelId> ids(v.data().size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (v.data()[i] < 0)
      throw NiftiError(NiftiError::Code::out_of_range, "datatype", "negative label id");
    ids[i] = static_cast<LabelId>(v.data()[i]);
  }
  LabelVolume lv(v.geometry(), std::move(ids), {});
  lv.set_names(dictionary_for(lv.present_labels(), scheme));
  return lv;
}

Mask read_mask_nifti(const std::string& path) {
  Volume v = read_nifti(path);
  std::vector<std::uint8_t> on(v.geometry().num_voxels());
  for (std::size_t i = 0; i < on.size(); ++i) on[i] = v.at(i) != 0.0 ? 1 : 0;
  return Mask(v.geometry(), std::move(on));
}

void write_nifti(const Volume& v, const std::string& path) {
  auto buf = header(v.geometry(), v.nt(), v.ndim(), v.dtype(), v.time_step());
  append_samples(buf, v.data(), v.dtype());
  dump(path, buf);
}

void write_nifti(const LabelVolume& v, const std::string& path) {
  v.validate();
  const DataType dtype = v.max_label() <= 255 ? DataType::uint8 : DataType::int16;
  std::vector<double> data(v.data().begin(), v.data().end());
  auto buf = header(v.geometry(), 1, 3, dtype, 0.0);
  append_samples(buf, data, dtype);
  dump(path, buf);
}

void write_nifti(const Mask& m, const std::string& path) {
  std::vector<double> data(m.data().begin(), m.data().end());
  auto buf = header(m.geometry(), 1, 3, DataType::uint8, 0.0);
  append_samples(buf, data, DataType::uint8);
  dump(path, buf);
}

}  // namespace parcelbench
