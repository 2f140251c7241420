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

#include "hyperkd/banddef.hpp"

#include "hyperkd/error.hpp"

namespace hyperkd {

std::vector<int> contained_subset(const BandRange& target, const BandTable& source, OverlapMode mode) {
  std::vector<int> ids;
  for (const auto& s : source.ranges()) {
    const bool match = mode == OverlapMode::kContained
                           ? (s.lambda_min >= target.lambda_min && s.lambda_max <= target.lambda_max)
                           : (s.lambda_min < target.lambda_max && s.lambda_max > target.lambda_min);
    if (match) ids.push_back(s.band_id);
  }
  return ids;
}

AlignmentMap build_alignment(const BandTable& source, const BandTable& target, OverlapMode mode) {
  if (source.empty() || target.empty()) throw DataError("banddef", "alignment needs non-empty band tables");
  AlignmentMap map{source, target, {}};
  map.subsets.reserve(target.size());
  for (const auto& t : target.ranges()) {
    auto ids = contained_subset(t, source, mode);
    if (ids.empty()) throw EmptySubsetError(t.band_id);
    map.subsets.push_back(std::move(ids));
  }
  return map;
}

Plane synthesize_band(const HyperCube& cube, std::span<const int> subset) {
  if (subset.empty()) throw DataError("banddef", "cannot synthesize a band from an empty subset");
  Plane out{cube.height, cube.width, std::vector<double>(cube.plane_size(), 0.0)};
  for (int id : subset) {
    const auto idx = cube.band_table.index_of(id);
    if (!idx) throw DataError("banddef", "band id " + std::to_string(id) + " not present in cube '" + cube.tile_id + "'");
    const auto b = cube.band(*idx);
    for (std::size_t k = 0; k < b.size(); ++k) out.values[k] += b[k];
  }
  const double inv = 1.0 / static_cast<double>(subset.size());
  for (auto& v : out.values) v *= inv;
  return out;
}

HyperCube align_cube(const HyperCube& cube, const AlignmentMap& map) {
  if (!(cube.band_table == map.source)) {
    throw DataError("banddef", "alignment map was built for a different source band table");
  }
  HyperCube out(map.target.size(), cube.height, cube.width, map.target);
  for (std::size_t t = 0; t < map.subsets.size(); ++t) {
    const Plane p = synthesize_band(cube, map.subsets[t]);
    std::copy(p.values.begin(), p.values.end(), out.data.begin() + static_cast<long>(t * cube.plane_size()));
  }
  out.tile_id = cube.tile_id;
  out.split = cube.split;
  return out;
}

}  // namespace hyperkd
