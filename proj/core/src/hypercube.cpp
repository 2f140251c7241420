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

#include "hyperkd/hypercube.hpp"

#include <cmath>

#include "hyperkd/error.hpp"

namespace hyperkd {

const char* split_name(Split s) { return s == Split::kTrain ? "train" : "eval"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "eval") return Split::kEval;
  throw DataError("datastore", "unknown split '" + s + "'");
}

HyperCube::HyperCube(std::size_t c, std::size_t h, std::size_t w, BandTable table,
                     std::vector<double> values)
    : channels(c), height(h), width(w), data(std::move(values)), band_table(std::move(table)) {
  if (data.empty()) data.assign(c * h * w, 0.0);
  validate();
}

void HyperCube::validate() const {
  if (data.size() != channels * height * width) {
    throw InvariantError("datastore", "cube '" + tile_id + "' data length does not match dims");
  }
  if (band_table.size() != channels) {
    throw InvariantError("datastore", "cube '" + tile_id + "' has " + std::to_string(channels) +
                                          " channels but a band table of " +
                                          std::to_string(band_table.size()));
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw InvariantError("datastore", "cube '" + tile_id + "' holds a non-finite value");
  }
  if (normalized && !stats) throw InvariantError("datastore", "normalized cube without stats");
}

Plane channel_mean(const HyperCube& cube) {
  Plane p{cube.height, cube.width, std::vector<double>(cube.plane_size(), 0.0)};
  for (std::size_t c = 0; c < cube.channels; ++c) {
    const auto b = cube.band(c);
    for (std::size_t k = 0; k < b.size(); ++k) p.values[k] += b[k];
  }
  for (auto& v : p.values) v /= static_cast<double>(cube.channels);
  return p;
}

}  // namespace hyperkd
