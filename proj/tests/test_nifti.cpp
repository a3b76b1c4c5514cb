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

#include <cstring>
#include <fstream>
#include <random>

#include <zlib.h>

#include "helpers.hpp"
#include "parcelbench/nifti.hpp"

using namespace parcelbench;

namespace {

// Builds a NIfTI-1 file byte by byte from the published field offsets,
// independently of the library's writer.
struct RawHeader {
  std::vector<unsigned char> bytes = std::vector<unsigned char>(352, 0);

  template <class T>
  void put(std::size_t off, T v) { std::memcpy(bytes.data() + off, &v, sizeof(T)); }

  RawHeader(std::array<std::int16_t, 8> dim, std::int16_t datatype, std::int16_t bitpix) {
    put<std::int32_t>(0, 348);
    for (int i = 0; i < 8; ++i) put<std::int16_t>(40 + 2 * i, dim[static_cast<std::size_t>(i)]);
    put<std::int16_t>(70, datatype);
    put<std::int16_t>(72, bitpix);
    put<float>(108, 352.0f);
    put<float>(112, 1.0f);
    std::memcpy(bytes.data() + 344, "n+1\0", 4);
  }
  void pixdim(std::array<float, 8> p) {
    for (int i = 0; i < 8; ++i) put<float>(76 + 4 * i, p[static_cast<std::size_t>(i)]);
  }
  void sform(const Eigen::Matrix<double, 3, 4>& m) {
    put<std::int16_t>(254, 1);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) put<float>(280 + 16 * r + 4 * c, static_cast<float>(m(r, c)));
  }
  template <class T>
  void append(const std::vector<T>& data) {
    const std::size_t o = bytes.size();
    bytes.resize(o + data.size() * sizeof(T));
    std::memcpy(bytes.data() + o, data.data(), data.size() * sizeof(T));
  }
  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
};

NiftiError::Code read_error(const std::string& path) {
  try {
    read_nifti(path);
  } catch (const NiftiError& e) {
    return e.code();
  }
  FAIL("expected NiftiError");
  return NiftiError::Code::io;
}

}  // namespace

TEST_SUITE("nifti") {

TEST_CASE("hand-built float32 file is decoded with its sform affine") {
  testing::TempDir dir("nifti");
  RawHeader h({3, 2, 3, 1, 1, 1, 1, 1}, 16, 32);
  h.pixdim({1, 2, 3, 4, 0, 0, 0, 0});
  Eigen::Matrix<double, 3, 4> s;
  s << 2, 0, 0, -5,  //
      0, 3, 0, 7,    //
      0, 0, 4, 1;
  h.sform(s);
  h.append(std::vector<float>{0.5f, 1.5f, 2.5f, 3.5f, 4.5f, 5.5f});
  h.save(dir.file("a.nii"));

  const Volume v = read_nifti(dir.file("a.nii"));
  CHECK(v.geometry().dims == std::array<std::size_t, 3>{2, 3, 1});
  CHECK(v.nt() == 1);
  CHECK(v.dtype() == DataType::float32);
  CHECK(v.geometry().spacing == std::array<double, 3>{2, 3, 4});
  CHECK(v.at(v.geometry().linear(1, 2, 0)) == 5.5);
  const Eigen::Vector3d w = v.geometry().world(v.geometry().linear(1, 2, 0));
  CHECK(w.x() == doctest::Approx(-3));
  CHECK(w.y() == doctest::Approx(13));
  CHECK(w.z() == doctest::Approx(1));
}

TEST_CASE("pixdim diagonal is used when neither form is set") {
  testing::TempDir dir("nifti");
  RawHeader h({3, 2, 2, 2, 1, 1, 1, 1}, 2, 8);
  h.pixdim({1, 0.5f, 1.5f, 2.5f, 0, 0, 0, 0});
  h.append(std::vector<std::uint8_t>{0, 1, 2, 3, 4, 5, 6, 7});
  h.save(dir.file("p.nii"));
  const LabelVolume lv = read_label_nifti(dir.file("p.nii"), LabelScheme::numeric);
  CHECK(lv.at(7) == 7);
  CHECK(lv.name_of(7) == "C7");
  CHECK(lv.geometry().world(1).x() == doctest::Approx(0.5));
  CHECK(lv.geometry().world(4).z() == doctest::Approx(2.5));
}

TEST_CASE("scl_slope and scl_inter are applied on read") {
  testing::TempDir dir("nifti");
  RawHeader h({3, 2, 1, 1, 1, 1, 1, 1}, 4, 16);
  h.pixdim({1, 1, 1, 1, 0, 0, 0, 0});
  h.put<float>(112, 2.0f);
  h.put<float>(116, -1.0f);
  h.append(std::vector<std::int16_t>{10, -3});
  h.save(dir.file("s.nii"));
  const Volume v = read_nifti(dir.file("s.nii"));
  CHECK(v.at(0) == 19.0);
  CHECK(v.at(1) == -7.0);
}

TEST_CASE("write and read round trip for every supported datatype") {
  testing::TempDir dir("nifti");
  std::mt19937_64 rng(11);
  const Geometry g = Geometry::make({4, 3, 5}, {1.0, 2.0, 0.5}, Eigen::Vector3d(-3, 2, 9));

  Volume f(g, 3);
  std::normal_distribution<double> gauss;
  for (auto& x : f.data()) x = static_cast<float>(gauss(rng));
  f.set_time_step(0.5);
  write_nifti(f, dir.file("f.nii"));
  const Volume f2 = read_nifti(dir.file("f.nii"));
  CHECK(f2 == f);

  LabelVolume small = testing::random_labels(g, 11, rng);
  small.set_names(dictionary_for(small.present_labels(), LabelScheme::numeric));
  write_nifti(small, dir.file("u8.nii"));
  CHECK(read_label_nifti(dir.file("u8.nii"), LabelScheme::numeric) == small);

  LabelVolume big(g, numeric_dictionary(300));
  big.at(3) = 300;
  big.at(4) = 1;
  big.set_names(dictionary_for(big.present_labels(), LabelScheme::numeric));
  write_nifti(big, dir.file("i16.nii"));
  CHECK(read_label_nifti(dir.file("i16.nii"), LabelScheme::numeric) == big);

  Mask m(g);
  m.set(2, true);
  m.set(17, true);
  write_nifti(m, dir.file("m.nii.gz"));
  CHECK(read_mask_nifti(dir.file("m.nii.gz")) == m);
}

TEST_CASE("gzip-compressed files read like plain ones") {
  testing::TempDir dir("nifti");
  Volume v(testing::cube(3));
  for (std::size_t i = 0; i < v.data().size(); ++i) v.at(i) = static_cast<double>(i);
  write_nifti(v, dir.file("v.nii.gz"));
  gzFile gz = gzopen(dir.file("v.nii.gz").c_str(), "rb");
  REQUIRE(gz != nullptr);
  CHECK(gzdirect(gz) == 0);  // really compressed
  gzclose(gz);
  CHECK(read_nifti(dir.file("v.nii.gz")) == v);
}

TEST_CASE("writer emits a 348-byte header with the single-file magic") {
  testing::TempDir dir("nifti");
  write_nifti(Volume(testing::cube(2)), dir.file("h.nii"));
  std::ifstream in(dir.file("h.nii"), std::ios::binary);
  std::vector<char> b((std::istreambuf_iterator<char>(in)), {});
  REQUIRE(b.size() == 352 + 8 * 4);
  std::int32_t sz = 0;
  std::memcpy(&sz, b.data(), 4);
  CHECK(sz == 348);
  CHECK(std::memcmp(b.data() + 344, "n+1\0", 4) == 0);
  float off = 0;
  std::memcpy(&off, b.data() + 108, 4);
  CHECK(off == 352.0f);
}

TEST_CASE("malformed headers are rejected with the offending field") {
  testing::TempDir dir("nifti");
  {
    RawHeader h({3, 1, 1, 1, 1, 1, 1, 1}, 16, 32);
    std::memcpy(h.bytes.data() + 344, "ni1\0", 4);
    h.append(std::vector<float>{1});
    h.save(dir.file("magic.nii"));
    CHECK(read_error(dir.file("magic.nii")) == NiftiError::Code::bad_magic);
  }
  {
    RawHeader h({3, 1, 1, 1, 1, 1, 1, 1}, 16, 32);
    h.put<std::int32_t>(0, 0x5c010000);  // 348 byte-swapped
    h.save(dir.file("be.nii"));
    CHECK(read_error(dir.file("be.nii")) == NiftiError::Code::big_endian);
  }
  {
    RawHeader h({3, 1, 1, 1, 1, 1, 1, 1}, 16, 32);
    h.put<std::int32_t>(0, 540);
    h.save(dir.file("sz.nii"));
    CHECK(read_error(dir.file("sz.nii")) == NiftiError::Code::bad_sizeof_hdr);
  }
  {
    RawHeader h({3, 1, 1, 1, 1, 1, 1, 1}, 64, 64);  // float64
    h.append(std::vector<double>{1});
    h.save(dir.file("dt.nii"));
    CHECK(read_error(dir.file("dt.nii")) == NiftiError::Code::unsupported_datatype);
  }
  {
    RawHeader h({3, 4, 4, 4, 1, 1, 1, 1}, 16, 32);
    h.append(std::vector<float>(10, 0.0f));
    h.save(dir.file("short.nii"));
    CHECK(read_error(dir.file("short.nii")) == NiftiError::Code::truncated);
  }
  {
    RawHeader h({3, 0, 1, 1, 1, 1, 1, 1}, 16, 32);
    h.save(dir.file("dims.nii"));
    CHECK(read_error(dir.file("dims.nii")) == NiftiError::Code::bad_dims);
  }
  CHECK(read_error(dir.file("missing.nii")) == NiftiError::Code::io);
}

TEST_CASE("float volumes are not accepted as labels") {
  testing::TempDir dir("nifti");
  write_nifti(Volume(testing::cube(2)), dir.file("f.nii"));
  CHECK_THROWS_AS(read_label_nifti(dir.file("f.nii")), NiftiError);
}

}  // TEST_SUITE
