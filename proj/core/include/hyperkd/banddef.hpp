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

#include <span>
#include <vector>

#include "hyperkd/band_table.hpp"
#include "hyperkd/hypercube.hpp"

namespace hyperkd {

/// kContained keeps source bands lying entirely inside the target range;
/// kIntersecting keeps any source band that overlaps it.
enum class OverlapMode { kContained, kIntersecting };

/// Source band ids (in source table order) matched to one target band.
std::vector<int> contained_subset(const BandRange& target, const BandTable& source,
                                  OverlapMode mode = OverlapMode::kContained);

/// For each target band, the source bands averaged into it.
struct AlignmentMap {
  BandTable source;
  BandTable target;
  std::vector<std::vector<int>> subsets;  // parallel to target.ranges()
};

/// Throws EmptySubsetError naming the first target band with no match.
AlignmentMap build_alignment(const BandTable& source, const BandTable& target,
                             OverlapMode mode = OverlapMode::kContained);

/// Pixelwise mean of the listed bands.
Plane synthesize_band(const HyperCube& cube, std::span<const int> subset);

/// Cube with one synthesized plane per target band, in target order.
HyperCube align_cube(const HyperCube& cube, const AlignmentMap& map);

}  // namespace hyperkd
