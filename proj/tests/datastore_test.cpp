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

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "hyperkd/checkpoint.hpp"
#include "hyperkd/datastore.hpp"
#include "hyperkd/error.hpp"
#include "hyperkd/saliency.hpp"
#include "test_support.hpp"

namespace hyperkd {
namespace {

namespace fs = std::filesystem;

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

TileStore random_store(std::size_t n, Rng& rng) {
  TileStore s;
  const BandTable t = anchored_band_table(12);
  for (std::size_t i = 0; i < n; ++i) {
    HyperCube c(12, 4, 6, t, round_to_f32(testing::random_values(12 * 24, rng, 0, 1)));
    c.tile_id = "t" + std::to_string(i);
    c.split = i + 1 == n ? Split::kEval : Split::kTrain;
    s.labels[c.tile_id] = std::vector<int>(24, static_cast<int>(i));
    s.targets[c.tile_id] = round_to_f32(testing::random_values(24, rng));
    s.tiles.push_back(std::move(c));
  }
  s.stats = compute_stats(s.tiles);
  return s;
}

TEST(StoreTest, RoundTripIsBitExact) {
  Rng rng(31);
  const TileStore s = random_store(3, rng);
  const fs::path dir = testing::scratch_dir("store_roundtrip");
  write_store(s, dir);
  const TileStore back = read_store(dir);
  ASSERT_EQ(back.tiles.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(bit_equal(back.tiles[i].data, s.tiles[i].data));
    EXPECT_EQ(back.tiles[i].band_table, s.tiles[i].band_table);
    EXPECT_EQ(back.tiles[i].tile_id, s.tiles[i].tile_id);
    EXPECT_EQ(back.tiles[i].split, s.tiles[i].split);
  }
  EXPECT_EQ(back.labels, s.labels);
  for (const auto& [id, v] : s.targets) EXPECT_TRUE(bit_equal(back.targets.at(id), v));
  ASSERT_TRUE(back.stats.has_value());
  EXPECT_TRUE(bit_equal(back.stats->mean, s.stats->mean));
  EXPECT_TRUE(bit_equal(back.stats->std, s.stats->std));
  EXPECT_FALSE(fs::exists(dir / "store.lock"));
}

TEST(StoreTest, ManifestDescribesTheWrittenSet) {
  Rng rng(32);
  const TileStore s = random_store(3, rng);
  const fs::path dir = testing::scratch_dir("store_manifest");
  write_store(s, dir);
  const StoreManifest m = read_manifest(dir);
  EXPECT_EQ(m.tile_ids.size(), 3u);
  EXPECT_EQ(m.bands, 12u);
  EXPECT_EQ(m.height, 4u);
  EXPECT_EQ(m.width, 6u);
  EXPECT_EQ(m.dtype, "f32");
  EXPECT_TRUE(m.has_stats);
  EXPECT_EQ(m.band_table, s.tiles[0].band_table);
}

TEST(StoreTest, MissingDataFileNamesTheTile) {
  Rng rng(33);
  const fs::path dir = testing::scratch_dir("store_missing");
  write_store(random_store(3, rng), dir);
  fs::remove(dir / "tile_t1.bin");
  try {
    read_store(dir);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("t1"), std::string::npos) << e.what();
  }
}

TEST(StoreTest, TruncatedFileAndBadDtypeAreErrors) {
  Rng rng(34);
  const fs::path dir = testing::scratch_dir("store_corrupt");
  write_store(random_store(2, rng), dir);
  fs::resize_file(dir / "tile_t0.bin", 100);
  EXPECT_THROW(read_store(dir), DataError);

  write_store(random_store(2, rng), dir);
  std::ifstream in(dir / "manifest.json");
  std::string text((std::istreambuf_iterator<char>(in)), {});
  in.close();
  text.replace(text.find("\"f32\""), 5, "\"f64\"");
  std::ofstream(dir / "manifest.json") << text;
  EXPECT_THROW(read_store(dir), DataError);

  std::ofstream(dir / "manifest.json") << "{ not json";
  EXPECT_THROW(read_store(dir), DataError);
}

TEST(StoreTest, LockFileBlocksConcurrentWriters) {
  Rng rng(35);
  const fs::path dir = testing::scratch_dir("store_lock");
  std::ofstream(dir / "store.lock") << "held";
  EXPECT_THROW(write_store(random_store(1, rng), dir), DataError);
  EXPECT_TRUE(fs::exists(dir / "store.lock"));
}

TEST(StatsTest, ConstantBandIsFlooredAndNormalizesToZero) {
  const BandTable t("s", {{1, 500, 510}, {2, 600, 610}});
  std::vector<double> v(2 * 9, 0.25);
  for (std::size_t k = 9; k < 18; ++k) v[k] = static_cast<double>(k);
  const HyperCube c(2, 3, 3, t, v);
  const BandStats s = compute_stats(std::vector<HyperCube>{c});
  EXPECT_EQ(s.std[0], 1e-8);
  const HyperCube n = normalize(c, s);
  for (double x : n.band(0)) EXPECT_EQ(x, 0.0);
}

TEST(StatsTest, NormalizedTrainingSetIsStandardized) {
  Rng rng(36);
  const TileStore s = random_store(5, rng);
  const auto train = s.split(Split::kTrain);
  for (std::size_t c = 0; c < 12; ++c) {
    double m = 0, v = 0, n = 0;
    for (const auto* t : train) {
      const HyperCube z = normalize(*t, *s.stats);
      for (double x : z.band(c)) {
        m += x;
        v += x * x;
        n += 1;
      }
    }
    EXPECT_GT(m / n, -1e-6);
    EXPECT_LT(m / n, 1e-6);
    EXPECT_NEAR(v / n, 1.0, 1e-9);
  }
}

TEST(StatsTest, DenormalizeInvertsNormalize) {
  Rng rng(37);
  const TileStore s = random_store(3, rng);
  for (const auto& t : s.tiles) {
    const HyperCube back = denormalize(normalize(t, *s.stats), *s.stats);
    for (std::size_t i = 0; i < t.data.size(); ++i) EXPECT_NEAR(back.data[i], t.data[i], 1e-10);
  }
}

TEST(StatsTest, EvalTilesNeverContribute) {
  Rng rng(38);
  const TileStore s = random_store(4, rng);
  std::vector<HyperCube> train_only;
  for (const auto* t : s.split(Split::kTrain)) train_only.push_back(*t);
  EXPECT_EQ(compute_stats(s.tiles), compute_stats(train_only));
  std::vector<HyperCube> all_train = s.tiles;
  for (auto& t : all_train) t.split = Split::kTrain;
  EXPECT_NE(compute_stats(all_train), compute_stats(s.tiles));
  EXPECT_THROW(compute_stats(std::vector<HyperCube>{}), DataError);
}

TEST(StatsTest, MismatchedBandCountThrows) {
  Rng rng(39);
  const TileStore s = random_store(2, rng);
  const BandStats wrong{{0.0}, {1.0}};
  EXPECT_THROW(normalize(s.tiles[0], wrong), DataError);
}

double patch_variance(const Plane& g, std::size_t cell, std::size_t idx, std::size_t cols) {
  const std::size_t r0 = (idx / cols) * cell, c0 = (idx % cols) * cell;
  double m = 0, v = 0;
  for (std::size_t i = 0; i < cell; ++i)
    for (std::size_t j = 0; j < cell; ++j) m += g.at(r0 + i, c0 + j);
  m /= static_cast<double>(cell * cell);
  for (std::size_t i = 0; i < cell; ++i)
    for (std::size_t j = 0; j < cell; ++j) v += (g.at(r0 + i, c0 + j) - m) * (g.at(r0 + i, c0 + j) - m);
  return v / static_cast<double>(cell * cell);
}

TEST(SceneTest, SameSeedIsBitIdentical) {
  SceneSpec spec;
  spec.seed = 99;
  spec.planted_count = 5;
  const Scene a = gen_scene(spec), b = gen_scene(spec);
  EXPECT_TRUE(bit_equal(a.cube.data, b.cube.data));
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.salient, b.salient);
  spec.seed = 100;
  EXPECT_FALSE(bit_equal(gen_scene(spec).cube.data, a.cube.data));
}

TEST(SceneTest, ValuesAreFloatRepresentable) {
  SceneSpec spec;
  spec.planted_count = 3;
  const Scene s = gen_scene(spec);
  EXPECT_TRUE(bit_equal(round_to_f32(s.cube.data), s.cube.data));
}

TEST(SceneTest, ZeroAmplitudeHasNoSalientCellsAndFlatScores) {
  SceneSpec spec;
  spec.seed = 5;
  spec.height = spec.width = 64;
  spec.planted_count = 10;
  spec.amplitude = 0.0;
  const Scene flat = gen_scene(spec);
  for (bool b : flat.salient) EXPECT_FALSE(b);
  spec.amplitude = SceneSpec{}.amplitude;
  const Scene textured = gen_scene(spec);
  for (auto m : {saliency::Method::kGabor, saliency::Method::kWavelet}) {
    const auto f = saliency::score_patches(flat.cube, m, 8).scores;
    const auto t = saliency::score_patches(textured.cube, m, 8).scores;
    const double spread = *std::max_element(f.begin(), f.end()) - *std::min_element(f.begin(), f.end());
    EXPECT_LT(spread, 0.1 * *std::max_element(t.begin(), t.end())) << saliency::method_name(m);
  }
}

TEST(SceneTest, PlantedVarianceExceedsBackgroundFivefold) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SceneSpec spec;
    spec.seed = seed;
    spec.height = spec.width = 64;
    spec.planted_count = 12;
    const Scene s = gen_scene(spec);
    const Plane g = channel_mean(s.cube);
    double planted = 0, background = 0;
    std::size_t np = 0, nb = 0;
    for (std::size_t i = 0; i < s.salient.size(); ++i) {
      const double v = patch_variance(g, 8, i, 8);
      if (s.salient[i]) {
        planted += v;
        ++np;
      } else {
        background += v;
        ++nb;
      }
    }
    ASSERT_EQ(np, 12u);
    EXPECT_GE(planted / static_cast<double>(np), 5.0 * background / static_cast<double>(nb)) << "seed " << seed;
  }
}

TEST(SceneTest, LabelsCoverClassRange) {
  SceneSpec spec;
  spec.seed = 3;
  spec.height = spec.width = 64;
  const Scene s = gen_scene(spec);
  ASSERT_EQ(s.labels.size(), 64u * 64u);
  for (int l : s.labels) {
    EXPECT_GE(l, 0);
    EXPECT_LT(l, 4);
  }
  EXPECT_EQ(s.target.size(), s.labels.size());
}

TEST(DatasetTest, SplitsAndStats) {
  SceneSpec base;
  const TileStore s = gen_dataset(base, 7, 3, 2);
  EXPECT_EQ(s.split(Split::kTrain).size(), 3u);
  EXPECT_EQ(s.split(Split::kEval).size(), 2u);
  ASSERT_TRUE(s.stats.has_value());
  EXPECT_EQ(*s.stats, compute_stats(s.split(Split::kTrain)));
  EXPECT_EQ(s.tile("eval_0001").split, Split::kEval);
  EXPECT_THROW(s.tile("nope"), DataError);
}

// ---- checkpoints ------------------------------------------------------------------

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.config = {{"a", "1"}, {"name", "x y"}};
  c.state = {{"global_step", "17"}};
  c.arrays.push_back({"w", {2, 3}, {1, 2, 3, 4, 5, -0.0}});
  c.arrays.push_back({"b", {3}, {1e-300, 3.5, -7}});
  return c;
}

TEST(CheckpointTest, EncodeDecodeRoundTrip) {
  const Checkpoint c = sample_checkpoint();
  const Checkpoint d = decode_checkpoint(encode_checkpoint(c));
  EXPECT_EQ(d.config, c.config);
  EXPECT_EQ(d.state, c.state);
  ASSERT_EQ(d.arrays.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(d.arrays[i].name, c.arrays[i].name);
    EXPECT_EQ(d.arrays[i].shape, c.arrays[i].shape);
    EXPECT_TRUE(bit_equal(d.arrays[i].values, c.arrays[i].values));
  }
  EXPECT_TRUE(d.has_array("b"));
  EXPECT_THROW(d.array("zz"), DataError);
}

TEST(CheckpointTest, StartsWithMagic) { EXPECT_EQ(encode_checkpoint(sample_checkpoint()).substr(0, 4), "HKD1"); }

TEST(CheckpointTest, CorruptionIsDetected) {
  const std::string bytes = encode_checkpoint(sample_checkpoint());
  EXPECT_THROW(decode_checkpoint("XXXX" + bytes.substr(4)), DataError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
  EXPECT_THROW(decode_checkpoint(bytes + "junk"), DataError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, 7)), DataError);
}

TEST(CheckpointTest, FileRoundTrip) {
  const fs::path dir = testing::scratch_dir("ckpt");
  save_checkpoint(sample_checkpoint(), dir / "c.hkd");
  EXPECT_EQ(load_checkpoint(dir / "c.hkd").state.at("global_step"), "17");
  EXPECT_THROW(load_checkpoint(dir / "missing.hkd"), DataError);
}

}  // namespace
}  // namespace hyperkd
