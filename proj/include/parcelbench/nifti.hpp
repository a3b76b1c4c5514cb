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

/// Single-file NIfTI-1 reader and writer (little-endian; .nii or .nii.gz).

#include <stdexcept>
#include <string>

#include "parcelbench/volume.hpp"

namespace parcelbench {

class NiftiError : public std::runtime_error {
 public:
  enum class Code {
    io,
    bad_sizeof_hdr,
    big_endian,
    bad_magic,
    unsupported_datatype,
    bad_dims,
    truncated,
    out_of_range,
  };

  NiftiError(Code code, std::string field, const std::string& detail);

  Code code() const { return code_; }
  /// Header field the error concerns ("magic", "datatype", "dim", ...).
  const std::string& field() const { return field_; }

 private:
  Code code_;
  std::string field_;
};

/// How names are attached to ids read back from an integer file.
enum class LabelScheme { nuclei, numeric };

Volume read_nifti(const std::string& path);
/// Requires an integer datatype; every nonzero id gets a dictionary entry.
LabelVolume read_label_nifti(const std::string& path, LabelScheme scheme = LabelScheme::nuclei);
Mask read_mask_nifti(const std::string& path);

/// Writes the volume with its own datatype. Header: vox_offset 352,
/// scl_slope 1, scl_inter 0, sform_code 1 carrying the affine.
void write_nifti(const Volume& v, const std::string& path);
/// uint8 when every id fits, int16 otherwise.
void write_nifti(const LabelVolume& v, const std::string& path);
void write_nifti(const Mask& m, const std::string& path);

/// Dictionary that read_label_nifti attaches for the given ids.
LabelDictionary dictionary_for(const std::vector<LabelId>& ids, LabelScheme scheme);

}  // namespace parcelbench
