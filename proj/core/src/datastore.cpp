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

#include "hyperkd/datastore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "hyperkd/error.hpp"
#include "hyperkd/rng.hpp"

namespace hyperkd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void data_error(const std::string& msg) { throw DataError("datastore", msg); }

void check_tile_id(const std::string& id) {
  if (id.empty()) data_error("tile id must not be empty");
  for (char ch : id) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
                    ch == '_' || ch == '-';
    if (!ok) data_error("tile id '" + id + "' may only contain [A-Za-z0-9_-]");
  }
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) data_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) data_error("short write to " + path.string());
}

std::string read_file(const fs::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) data_error("missing data file " + path.filename().string() + " for " + what);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string encode_f32(const std::vector<double>& values) {
  std::string out;
  out.reserve(values.size() * 4);
  for (double v : values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

std::vector<double> decode_f32(const std::string& bytes, std::size_t count, const std::string& what) {
  if (bytes.size() != count * 4) {
    data_error("truncated or oversized file for " + what + ": expected " + std::to_string(count * 4) +
               " bytes, found " + std::to_string(bytes.size()));
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<float>(get_u32(bytes, 4 * i));
  return values;
}

// Exclusive ownership of a store directory for the duration of a write.
class StoreLock {
 public:
  explicit StoreLock(const fs::path& dir) : path_(dir / "store.lock") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) data_error("store " + dir.string() + " is locked by another writer (store.lock exists)");
    std::fclose(f);
  }
  ~StoreLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  StoreLock(const StoreLock&) = delete;
  StoreLock& operator=(const StoreLock&) = delete;

 private:
  fs::path path_;
};

json band_table_json(const BandTable& t) {
  json bands = json::array();
  for (const auto& r : t.ranges()) bands.push_back({r.band_id, r.lambda_min, r.lambda_max});
  return {{"sensor", t.sensor_name()}, {"bands", bands}};
}

BandTable band_table_from_json(const json& j) {
  std::vector<BandRange> ranges;
  for (const auto& b : j.at("bands")) ranges.push_back({b.at(0).get<int>(), b.at(1).get<double>(), b.at(2).get<double>()});
  return BandTable(j.at("sensor").get<std::string>(), std::move(ranges));
}

json load_manifest_json(const fs::path& dir) {
  const auto text = read_file(dir / "manifest.json", "manifest");
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    data_error("corrupt manifest in " + dir.string() + ": " + e.what());
  }
}

StoreManifest parse_manifest(const json& j) {
  StoreManifest m;
  try {
    if (j.at("format").get<std::string>() != "hyperkd-tile-store") data_error("manifest format tag is not hyperkd-tile-store");
    m.dtype = j.at("dtype").get<std::string>();
    if (m.dtype != "f32") data_error("dtype mismatch: manifest says '" + m.dtype + "', reader expects 'f32'");
    m.bands = j.at("dims").at("bands").get<std::size_t>();
    m.height = j.at("dims").at("height").get<std::size_t>();
    m.width = j.at("dims").at("width").get<std::size_t>();
    m.band_table = band_table_from_json(j.at("band_table"));
    for (const auto& t : j.at("tiles")) {
      m.tile_ids.push_back(t.at("id").get<std::string>());
      m.splits.push_back(parse_split(t.at("split").get<std::string>()));
    }
    m.has_stats = j.contains("stats");
  } catch (const json::exception& e) {
    data_error(std::string("corrupt manifest: ") + e.what());
  }
  if (m.band_table.size() != m.bands) data_error("corrupt manifest: band table length differs from dims.bands");
  return m;
}

}  // namespace

std::vector<const HyperCube*> TileStore::split(Split s) const {
  std::vector<const HyperCube*> out;
  for (const auto& t : tiles) {
    if (t.split == s) out.push_back(&t);
  }
  return out;
}

const HyperCube& TileStore::tile(const std::string& id) const {
  for (const auto& t : tiles) {
    if (t.tile_id == id) return t;
  }
  data_error("no tile named '" + id + "'");
}

std::vector<double> round_to_f32(std::vector<double> values) {
  for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
  return values;
}

void write_store(const TileStore& store, const fs::path& dir) {
  if (store.tiles.empty()) data_error("refusing to write an empty store");
  const auto& first = store.tiles.front();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) data_error("cannot create store directory " + dir.string() + ": " + ec.message());
  StoreLock lock(dir);

  json tiles = json::array();
  for (const auto& t : store.tiles) {
    check_tile_id(t.tile_id);
    t.validate();
    if (t.normalized) data_error("tile '" + t.tile_id + "' is normalized; stores hold raw values");
    if (t.channels != first.channels || t.height != first.height || t.width != first.width ||
        !(t.band_table == first.band_table)) {
      data_error("tile '" + t.tile_id + "' does not share the store's dims and band table");
    }
    json entry = {{"id", t.tile_id}, {"file", "tile_" + t.tile_id + ".bin"}, {"split", split_name(t.split)}};
    write_file(dir / ("tile_" + t.tile_id + ".bin"), encode_f32(t.data));
    if (auto it = store.labels.find(t.tile_id); it != store.labels.end()) {
      if (it->second.size() != t.plane_size()) data_error("label map of tile '" + t.tile_id + "' has wrong size");
      std::string bytes;
      for (int v : it->second) put_u32(bytes, static_cast<std::uint32_t>(v));
      write_file(dir / ("labels_" + t.tile_id + ".bin"), bytes);
      entry["labels"] = "labels_" + t.tile_id + ".bin";
    }
    if (auto it = store.targets.find(t.tile_id); it != store.targets.end()) {
      if (it->second.size() != t.plane_size()) data_error("target map of tile '" + t.tile_id + "' has wrong size");
      write_file(dir / ("target_" + t.tile_id + ".bin"), encode_f32(it->second));
      entry["target"] = "target_" + t.tile_id + ".bin";
    }
    tiles.push_back(entry);
  }
  json manifest = {{"format", "hyperkd-tile-store"},
                   {"version", 1},
                   {"dtype", "f32"},
                   {"layout", "band,row,col"},
                   {"byte_order", "little"},
                   {"dims", {{"bands", first.channels}, {"height", first.height}, {"width", first.width}}},
                   {"tile_count", store.tiles.size()},
                   {"band_table", band_table_json(first.band_table)},
                   {"tiles", tiles}};
  if (store.stats) {
    if (store.stats->size() != first.channels) data_error("stats length does not match band count");
    manifest["stats"] = {{"mean", store.stats->mean}, {"std", store.stats->std}};
  }
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

StoreManifest read_manifest(const fs::path& dir) { return parse_manifest(load_manifest_json(dir)); }

TileStore read_store(const fs::path& dir) {
  const json j = load_manifest_json(dir);
  const StoreManifest m = parse_manifest(j);
  TileStore store;
  const std::size_t count = m.bands * m.height * m.width;
  try {
    for (const auto& t : j.at("tiles")) {
      const auto id = t.at("id").get<std::string>();
      check_tile_id(id);
      const std::string what = "tile '" + id + "'";
      HyperCube cube(m.bands, m.height, m.width, m.band_table,
                     decode_f32(read_file(dir / t.at("file").get<std::string>(), what), count, what));
      cube.tile_id = id;
      cube.split = parse_split(t.at("split").get<std::string>());
      if (t.contains("labels")) {
        const auto bytes = read_file(dir / t.at("labels").get<std::string>(), "labels of " + what);
        if (bytes.size() != cube.plane_size() * 4) data_error("truncated label file for " + what);
        std::vector<int> labels(cube.plane_size());
        for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(get_u32(bytes, 4 * i));
        store.labels[id] = std::move(labels);
      }
      if (t.contains("target")) {
        store.targets[id] = decode_f32(read_file(dir / t.at("target").get<std::string>(), "target of " + what),
                                       cube.plane_size(), "target of " + what);
      }
      store.tiles.push_back(std::move(cube));
    }
    if (j.contains("stats")) {
      BandStats s{j.at("stats").at("mean").get<std::vector<double>>(), j.at("stats").at("std").get<std::vector<double>>()};
      if (s.mean.size() != m.bands || s.std.size() != m.bands) data_error("corrupt manifest: stats length mismatch");
      store.stats = std::move(s);
    }
  } catch (const json::exception& e) {
    data_error(std::string("corrupt manifest: ") + e.what());
  }
  return store;
}

// ---- normalization --------------------------------------------------------------------

BandStats compute_stats(const std::vector<const HyperCube*>& tiles) {
  std::vector<const HyperCube*> train;
  for (const auto* t : tiles) {
    if (t->split == Split::kTrain) train.push_back(t);
  }
  if (train.empty()) data_error("band statistics need at least one training tile");
  const std::size_t C = train.front()->channels;
  BandStats s{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  double count = 0.0;
  for (const auto* t : train) {
    if (t->channels != C) data_error("tiles disagree on band count");
    if (t->normalized) data_error("statistics must be computed on raw tiles");
    count += static_cast<double>(t->plane_size());
    for (std::size_t c = 0; c < C; ++c)
      for (double v : t->band(c)) s.mean[c] += v;
  }
  for (auto& m : s.mean) m /= count;
  for (const auto* t : train)
    for (std::size_t c = 0; c < C; ++c)
      for (double v : t->band(c)) s.std[c] += (v - s.mean[c]) * (v - s.mean[c]);
  for (auto& v : s.std) v = std::max(std::sqrt(v / count), 1e-8);
  return s;
}

BandStats compute_stats(const std::vector<HyperCube>& tiles) {
  std::vector<const HyperCube*> ptrs;
  for (const auto& t : tiles) ptrs.push_back(&t);
  return compute_stats(ptrs);
}

HyperCube normalize(const HyperCube& cube, const BandStats& stats) {
  if (stats.size() != cube.channels) {
    data_error("stats cover " + std::to_string(stats.size()) + " bands, cube '" + cube.tile_id + "' has " +
               std::to_string(cube.channels));
  }
  if (cube.normalized) data_error("cube '" + cube.tile_id + "' is already normalized");
  HyperCube out = cube;
  for (std::size_t c = 0; c < cube.channels; ++c)
    for (std::size_t k = 0; k < cube.plane_size(); ++k) {
      auto& v = out.data[c * cube.plane_size() + k];
      v = (v - stats.mean[c]) / stats.std[c];
    }
  out.normalized = true;
  out.stats = stats;
  return out;
}

HyperCube denormalize(const HyperCube& cube, const BandStats& stats) {
  if (stats.size() != cube.channels) data_error("stats/band count mismatch in denormalize");
  if (!cube.normalized) data_error("cube '" + cube.tile_id + "' is not normalized");
  HyperCube out = cube;
  for (std::size_t c = 0; c < cube.channels; ++c)
    for (std::size_t k = 0; k < cube.plane_size(); ++k) {
      auto& v = out.data[c * cube.plane_size() + k];
      v = v * stats.std[c] + stats.mean[c];
    }
  out.normalized = false;
  out.stats.reset();
  return out;
}

// ---- synthetic scenes ------------------------------------------------------------------

namespace {

// A random low-frequency 2D field: sum of three plane waves with
// wavelength at least `length` pixels. Range roughly [-1, 1].
struct SmoothField {
  double kx[3], ky[3], phase[3];

  SmoothField(Rng& rng, double length) {
    for (int m = 0; m < 3; ++m) {
      const double angle = rng.uniform(0.0, std::numbers::pi);
      const double wavelength = length * rng.uniform(1.0, 2.0);
      kx[m] = 2.0 * std::numbers::pi * std::cos(angle) / wavelength;
      ky[m] = 2.0 * std::numbers::pi * std::sin(angle) / wavelength;
      phase[m] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
  }
  double operator()(double x, double y) const {
    double v = 0.0;
    for (int m = 0; m < 3; ++m) v += std::sin(kx[m] * x + ky[m] * y + phase[m]);
    return v / 3.0;
  }
};

}  // namespace

Scene gen_scene(const SceneSpec& spec) {
  const std::size_t C = spec.bands.size();
  const std::size_t H = spec.height, W = spec.width;
  if (C == 0 || H == 0 || W == 0) data_error("scene dims must be positive");
  if (spec.cell == 0 || H % spec.cell != 0 || W % spec.cell != 0) data_error("scene cell must divide height and width");
  if (spec.amplitude < 0.0) data_error("texture amplitude must be non-negative");
  if (spec.num_classes == 0) data_error("scene needs at least one class");
  const std::size_t rows = H / spec.cell, cols = W / spec.cell, cells = rows * cols;

  Rng rng(spec.seed);
  std::vector<std::size_t> planted = spec.planted;
  if (planted.empty() && spec.planted_count > 0) {
    if (spec.planted_count > cells) data_error("more planted cells than grid cells");
    auto perm = rng.permutation(cells);
    planted.assign(perm.begin(), perm.begin() + static_cast<long>(spec.planted_count));
  }
  std::vector<bool> textured(cells, false);
  for (auto c : planted) {
    if (c >= cells) data_error("planted cell " + std::to_string(c) + " outside the grid");
    textured[c] = true;
  }

  // Class spectra: smooth curves over wavelength from a library shared by
  // all scenes, so a class keeps its spectral shape across tiles.
  std::vector<std::vector<double>> spectra(spec.num_classes, std::vector<double>(C));
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    Rng lib(Rng::derive(spec.class_library_seed, {k}));
    const double base = lib.uniform(0.15, 0.4);
    const double swing = lib.uniform(0.05, 0.15);
    const double period = lib.uniform(600.0, 1600.0);
    const double phase = lib.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t b = 0; b < C; ++b) {
      const double lambda = 0.5 * (spec.bands[b].lambda_min + spec.bands[b].lambda_max);
      spectra[k][b] = base + swing * std::sin(2.0 * std::numbers::pi * lambda / period + phase);
    }
  }
  const double brightness = rng.uniform(0.7, 1.3);
  const SmoothField background(rng, spec.smoothness);
  std::vector<SmoothField> class_fields;
  for (std::size_t k = 0; k < spec.num_classes; ++k) class_fields.emplace_back(rng, 2.0 * static_cast<double>(spec.cell));
  const SmoothField soc(rng, spec.smoothness);

  // Labels are constant per grid cell.
  std::vector<int> cell_class(cells);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = (static_cast<double>(c) + 0.5) * static_cast<double>(spec.cell);
      const double y = (static_cast<double>(r) + 0.5) * static_cast<double>(spec.cell);
      int best = 0;
      double best_v = -1e300;
      for (std::size_t k = 0; k < spec.num_classes; ++k) {
        const double v = class_fields[k](x, y);
        if (v > best_v) {
          best_v = v;
          best = static_cast<int>(k);
        }
      }
      cell_class[r * cols + c] = best;
    }

  // Per-cell texture: three high-frequency plane waves, periods 2.2-4 px.
  struct Wave {
    double kx, ky, phase;
  };
  std::vector<std::vector<Wave>> textures(cells);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    if (!textured[cell]) continue;
    for (int m = 0; m < 3; ++m) {
      const double angle = rng.uniform(0.0, std::numbers::pi);
      const double period = rng.uniform(2.2, 4.0);
      textures[cell].push_back({2.0 * std::numbers::pi * std::cos(angle) / period,
                                2.0 * std::numbers::pi * std::sin(angle) / period,
                                rng.uniform(0.0, 2.0 * std::numbers::pi)});
    }
  }

  Scene scene;
  scene.cube = HyperCube(C, H, W, spec.bands);
  scene.labels.resize(H * W);
  scene.target.resize(H * W);
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      const std::size_t cell = (i / spec.cell) * cols + (j / spec.cell);
      const int cls = cell_class[cell];
      const double x = static_cast<double>(j), y = static_cast<double>(i);
      const double bg = 0.03 * background(x, y);
      scene.labels[i * W + j] = cls;
      scene.target[i * W + j] = static_cast<double>(cls) + 0.5 * soc(x, y);
      for (std::size_t b = 0; b < C; ++b) {
        double v = brightness * (spectra[static_cast<std::size_t>(cls)][b] + bg);
        if (textured[cell] && spec.amplitude > 0.0) {
          const double band_phase = 0.5 * std::numbers::pi * static_cast<double>(b) / static_cast<double>(C);
          double t = 0.0;
          for (const auto& w : textures[cell]) t += std::sin(w.kx * x + w.ky * y + w.phase + band_phase);
          v += spec.amplitude * t / std::sqrt(3.0);
        }
        scene.cube.at(b, i, j) = v;
      }
    }
  }
  scene.cube.data = round_to_f32(std::move(scene.cube.data));
  scene.target = round_to_f32(std::move(scene.target));
  scene.salient.assign(cells, false);
  if (spec.amplitude > 0.0) scene.salient = textured;
  return scene;
}

TileStore gen_dataset(const SceneSpec& base, std::uint64_t seed, std::size_t train, std::size_t eval) {
  TileStore store;
  for (std::size_t i = 0; i < train + eval; ++i) {
    SceneSpec spec = base;
    spec.seed = Rng::derive(seed, {i});
    Scene s = gen_scene(spec);
    std::ostringstream id;
    id << (i < train ? "train" : "eval") << '_' << std::setw(4) << std::setfill('0') << (i < train ? i : i - train);
    s.cube.tile_id = id.str();
    s.cube.split = i < train ? Split::kTrain : Split::kEval;
    store.labels[s.cube.tile_id] = std::move(s.labels);
    store.targets[s.cube.tile_id] = std::move(s.target);
    store.tiles.push_back(std::move(s.cube));
  }
  store.stats = compute_stats(store.split(Split::kTrain));
  return store;
}

}  // namespace hyperkd
