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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace hyperkd {

/// Spectral coverage of one sensor band, in nanometers.
struct BandRange {
  int band_id = 0;
  double lambda_min = 0.0;
  double lambda_max = 0.0;

  bool operator==(const BandRange&) const = default;
};

/// Throws DataError unless lambda_min < lambda_max and both lie in (100, 20000).
void validate_band_range(const BandRange& range);

/// Bands of one sensor, kept sorted by lambda_min (ties by band_id).
class BandTable {
 public:
  BandTable() = default;
  BandTable(std::string sensor_name, std::vector<BandRange> ranges);

  const std::string& sensor_name() const { return sensor_name_; }
  const std::vector<BandRange>& ranges() const { return ranges_; }
  std::size_t size() const { return ranges_.size(); }
  bool empty() const { return ranges_.empty(); }
  const BandRange& operator[](std::size_t i) const { return ranges_[i]; }

  /// Position of band_id in the sorted table.
  std::optional<std::size_t> index_of(int band_id) const;

  bool operator==(const BandTable&) const = default;

 private:
  std::string sensor_name_;
  std::vector<BandRange> ranges_;
};

/// Parses `band_id,lambda_min_nm,lambda_max_nm` lines after a mandatory header.
BandTable parse_band_table(const std::string& text, const std::string& sensor_name);
BandTable load_band_table(const std::filesystem::path& path);
std::string format_band_table(const BandTable& table);
void save_band_table(const BandTable& table, const std::filesystem::path& path);

/// The six HLS reflective bands used by the teacher (blue, green, red,
/// narrow NIR, SWIR1, SWIR2).
BandTable hls_band_table();

/// 218 contiguous bands over 420-2450 nm: 91 VNIR bands up to 1000 nm and
/// 127 SWIR bands above it.
BandTable enmap_like_band_table();

/// Small synthetic sensor with `n` narrow bands: half are placed inside the
/// HLS bands (so every HLS band contains at least one), the rest spread
/// evenly over 420-2450 nm. Requires n >= 12.
BandTable anchored_band_table(std::size_t n);

}  // namespace hyperkd
