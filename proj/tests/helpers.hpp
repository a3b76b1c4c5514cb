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

// Small builders shared by the unit tests.

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "parcelbench/volume.hpp"

namespace testing {

inline parcelbench::Geometry cube(std::size_t n, double spacing = 1.0) {
  return parcelbench::Geometry::make({n, n, n}, {spacing, spacing, spacing});
}

inline parcelbench::LabelVolume random_labels(const parcelbench::Geometry& g, int max_id, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, max_id);
  parcelbench::LabelVolume v(g, parcelbench::numeric_dictionary(max_id));
  for (auto& x : v.data()) x = pick(rng);
  return v;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("parcelbench_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
