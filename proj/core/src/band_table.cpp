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

#include "hyperkd/band_table.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "hyperkd/error.hpp"

namespace hyperkd {

void validate_band_range(const BandRange& r) {
  if (!(r.lambda_min < r.lambda_max)) {
    throw DataError("banddef", "band " + std::to_string(r.band_id) + ": lambda_min must be below lambda_max");
  }
  if (!(r.lambda_min > 100.0) || !(r.lambda_max < 20000.0)) {
    throw DataError("banddef", "band " + std::to_string(r.band_id) + ": wavelengths outside (100, 20000) nm");
  }
}

BandTable::BandTable(std::string sensor_name, std::vector<BandRange> ranges)
    : sensor_name_(std::move(sensor_name)), ranges_(std::move(ranges)) {
  std::set<int> ids;
  for (const auto& r : ranges_) {
    validate_band_range(r);
    if (!ids.insert(r.band_id).second) {
      throw DataError("banddef", "duplicate band id " + std::to_string(r.band_id));
    }
  }
  std::stable_sort(ranges_.begin(), ranges_.end(), [](const BandRange& a, const BandRange& b) {
    if (a.lambda_min != b.lambda_min) return a.lambda_min < b.lambda_min;
    return a.band_id < b.band_id;
  });
}

std::optional<std::size_t> BandTable::index_of(int band_id) const {
  for (std::size_t i = 0; i < ranges_.size(); ++i) {
    if (ranges_[i].band_id == band_id) return i;
  }
  return std::nullopt;
}

BandTable parse_band_table(const std::string& text, const std::string& sensor_name) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("banddef", "band table is empty (header line required)");
  {
    const std::string first = line.substr(0, line.find(','));
    char* end = nullptr;
    std::strtod(first.c_str(), &end);
    if (!first.empty() && end == first.c_str() + first.size()) {
      throw DataError("banddef", "band table is missing its header line");
    }
  }
  std::vector<BandRange> ranges;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string id, lo, hi, extra;
    if (!std::getline(fields, id, ',') || !std::getline(fields, lo, ',') || !std::getline(fields, hi, ',') ||
        std::getline(fields, extra, ',')) {
      throw DataError("banddef", "line " + std::to_string(line_no) + ": expected band_id,lambda_min_nm,lambda_max_nm");
    }
    try {
      std::size_t used = 0;
      BandRange r;
      r.band_id = std::stoi(id, &used);
      if (used != id.size()) throw std::invalid_argument(id);
      r.lambda_min = std::stod(lo, &used);
      if (used != lo.size()) throw std::invalid_argument(lo);
      r.lambda_max = std::stod(hi, &used);
      if (used != hi.size()) throw std::invalid_argument(hi);
      ranges.push_back(r);
    } catch (const std::logic_error&) {
      throw DataError("banddef", "line " + std::to_string(line_no) + ": malformed number");
    }
  }
  if (ranges.empty()) throw DataError("banddef", "band table lists no bands");
  return BandTable(sensor_name, std::move(ranges));
}

BandTable load_band_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("banddef", "cannot open band table " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_band_table(buf.str(), path.stem().string());
}

std::string format_band_table(const BandTable& table) {
  std::ostringstream os;
  os.precision(17);
  os << "band_id,lambda_min_nm,lambda_max_nm\n";
  for (const auto& r : table.ranges()) os << r.band_id << ',' << r.lambda_min << ',' << r.lambda_max << '\n';
  return os.str();
}

void save_band_table(const BandTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("banddef", "cannot write band table " + path.string());
  out << format_band_table(table);
}

BandTable hls_band_table() {
  return BandTable("HLS", {{1, 452.0, 512.0},
                           {2, 533.0, 590.0},
                           {3, 636.0, 673.0},
                           {4, 851.0, 879.0},
                           {5, 1566.0, 1651.0},
                           {6, 2107.0, 2294.0}});
}

BandTable enmap_like_band_table() {
  std::vector<BandRange> ranges;
  int id = 1;
  const double vnir_step = (1000.0 - 420.0) / 91.0;
  for (int i = 0; i < 91; ++i) ranges.push_back({id++, 420.0 + i * vnir_step, 420.0 + (i + 1) * vnir_step});
  const double swir_step = (2450.0 - 1000.0) / 127.0;
  for (int i = 0; i < 127; ++i) ranges.push_back({id++, 1000.0 + i * swir_step, 1000.0 + (i + 1) * swir_step});
  return BandTable("EnMAP-like", std::move(ranges));
}

BandTable anchored_band_table(std::size_t n) {
  if (n < 12) throw DataError("banddef", "anchored_band_table needs at least 12 bands");
  const BandTable hls = hls_band_table();
  std::vector<std::pair<double, double>> spans;
  const std::size_t inside = n / 2;
  for (std::size_t t = 0; t < hls.size(); ++t) {
    const std::size_t k = inside / hls.size() + (t < inside % hls.size() ? 1 : 0);
    const double lo = hls[t].lambda_min, hi = hls[t].lambda_max;
    const double step = (hi - lo) / static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i) {
      spans.emplace_back(lo + i * step + 0.1 * step, lo + (i + 1) * step - 0.1 * step);
    }
  }
  const std::size_t rest = n - inside;
  const double step = (2450.0 - 420.0) / static_cast<double>(rest);
  for (std::size_t i = 0; i < rest; ++i) {
    const double c = 420.0 + (i + 0.5) * step;
    spans.emplace_back(c - 4.0, c + 4.0);
  }
  std::sort(spans.begin(), spans.end());
  std::vector<BandRange> ranges;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    ranges.push_back({static_cast<int>(i + 1), spans[i].first, spans[i].second});
  }
  return BandTable("anchored-" + std::to_string(n), std::move(ranges));
}

}  // namespace hyperkd
