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

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hyperkd/band_table.hpp"
#include "hyperkd/hypercube.hpp"

namespace hyperkd {

// ---- tile store ----------------------------------------------------------------
//
// On-disk layout of a store directory:
//
//   manifest.json       dims, dtype tag "f32", band table, tile list, stats
//   tile_<id>.bin       raw little-endian float32, C-order (band, row, col)
//   labels_<id>.bin     optional per-pixel class ids, little-endian int32
//   target_<id>.bin     optional per-pixel regression target, float32
//   store.lock          present only while a writer owns the directory
//
// Values are computed in double and stored as float; a cube whose values are
// already float-representable round-trips bit-exactly.

struct TileStore {
  std::vector<HyperCube> tiles;  // all tiles share dims and band table
  std::optional<BandStats> stats;
  std::map<std::string, std::vector<int>> labels;      // by tile id
  std::map<std::string, std::vector<double>> targets;  // by tile id

  std::vector<const HyperCube*> split(Split s) const;
  const HyperCube& tile(const std::string& id) const;
};

/// Summary of manifest.json without reading tile payloads.
struct StoreManifest {
  std::size_t bands = 0, height = 0, width = 0;
  std::string dtype;
  BandTable band_table;
  std::vector<std::string> tile_ids;
  std::vector<Split> splits;
  bool has_stats = false;
};

void write_store(const TileStore& store, const std::filesystem::path& dir);
TileStore read_store(const std::filesystem::path& dir);
StoreManifest read_manifest(const std::filesystem::path& dir);

/// Values rounded through float, as they would be after a store roundtrip.
std::vector<double> round_to_f32(std::vector<double> values);

// ---- normalization ----------------------------------------------------------------

/// Per-band mean and population std over the training-split tiles only.
/// Throws DataError when no training tile is given.
BandStats compute_stats(const std::vector<const HyperCube*>& tiles);
BandStats compute_stats(const std::vector<HyperCube>& tiles);

HyperCube normalize(const HyperCube& cube, const BandStats& stats);
HyperCube denormalize(const HyperCube& cube, const BandStats& stats);

// ---- synthetic scenes ----------------------------------------------------------------

/// Description of a seeded synthetic scene. The background is smooth and
/// spectrally coherent; planted grid cells carry a high-frequency sinusoid
/// mixture that is shared across bands with a band-dependent phase.
struct SceneSpec {
  std::uint64_t seed = 0;
  BandTable bands = anchored_band_table(32);
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t cell = 8;               // planted-layout grid cell side
  double smoothness = 24.0;           // background correlation length, px
  std::vector<std::size_t> planted;   // row-major cell indices
  std::size_t planted_count = 0;      // used when `planted` is empty
  double amplitude = 0.08;            // texture amplitude (reflectance)
  std::size_t num_classes = 4;
  std::uint64_t class_library_seed = 1;  // class spectra, shared across scenes
};

struct Scene {
  HyperCube cube;
  std::vector<bool> salient;    // per grid cell: textured and amplitude > 0
  std::vector<int> labels;      // per pixel class id in [0, num_classes)
  std::vector<double> target;   // per pixel continuous target
};

Scene gen_scene(const SceneSpec& spec);

/// Generates `train + eval` scenes (seeds derived from `seed`) with labels and
/// regression targets attached, ready for write_store.
TileStore gen_dataset(const SceneSpec& base, std::uint64_t seed, std::size_t train, std::size_t eval);

}  // namespace hyperkd
