// Copyright 2026 The HyperKD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hyperkd/band_table.hpp"

namespace hyperkd {

enum class Split { kTrain, kEval };

const char* split_name(Split s);
Split parse_split(const std::string& s);

/// Per-band standardization statistics. std entries are floored at 1e-8.
struct BandStats {
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t size() const { return mean.size(); }
  bool operator==(const BandStats&) const = default;
};

/// One H x W plane of reals, row-major.
struct Plane {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * width + j]; }
};

/// A (C, H, W) raster tile. Bands follow band_table order.
struct HyperCube {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;  // C-order (band, row, col)
  BandTable band_table;
  bool normalized = false;
  std::optional<BandStats> stats;  // set when normalized
  std::string tile_id;
  Split split = Split::kTrain;

  HyperCube() = default;
  HyperCube(std::size_t c, std::size_t h, std::size_t w, BandTable table,
            std::vector<double> values = {});

  std::size_t plane_size() const { return height * width; }
  double at(std::size_t c, std::size_t i, std::size_t j) const {
    return data[(c * height + i) * width + j];
  }
  double& at(std::size_t c, std::size_t i, std::size_t j) { return data[(c * height + i) * width + j]; }
  std::span<const double> band(std::size_t c) const {
    return {data.data() + c * plane_size(), plane_size()};
  }

  /// Throws InvariantError if dims, band table, or values are inconsistent.
  void validate() const;
};

/// Pixelwise mean over channels.
Plane channel_mean(const HyperCube& cube);

}  // namespace hyperkd
