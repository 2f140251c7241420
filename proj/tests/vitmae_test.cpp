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

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iomanip>

#include "hyperkd/banddef.hpp"
#include "hyperkd/datastore.hpp"
#include "hyperkd/error.hpp"
#include "hyperkd/objective.hpp"
#include "hyperkd/vitmae.hpp"
#include "test_support.hpp"

namespace hyperkd::vitmae {
namespace {

namespace nx = hyperkd::numerics;
namespace fs = std::filesystem;

HyperCube random_cube(std::size_t c, std::size_t s, Rng& rng) {
  const BandTable t = anchored_band_table(std::max<std::size_t>(c, 12));
  std::vector<BandRange> r(t.ranges().begin(), t.ranges().begin() + static_cast<long>(c));
  return HyperCube(c, s, s, BandTable("t", r), testing::random_values(c * s * s, rng));
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.in_channels = 4;
  c.image_size = 16;
  c.patch_size = 4;
  c.enc_dim = 16;
  c.enc_layers = 2;
  c.enc_heads = 2;
  c.enc_mlp_dim = 24;
  c.dec_dim = 8;
  c.dec_layers = 1;
  c.dec_heads = 2;
  c.dec_mlp_dim = 16;
  c.tap_layer = 1;
  return c;
}

HyperCube aligned_scene(std::uint64_t seed) {
  SceneSpec spec;
  spec.seed = seed;
  spec.planted_count = 4;
  const Scene s = gen_scene(spec);
  return align_cube(s.cube, build_alignment(s.cube.band_table, hls_band_table()));
}

TEST(ModelConfigTest, Validation) {
  ModelConfig c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.patch_size = 5;
  EXPECT_THROW(c.validate(), DataError);
  c = tiny_config();
  c.enc_heads = 3;
  EXPECT_THROW(c.validate(), DataError);
  c = tiny_config();
  c.tap_layer = 3;
  EXPECT_THROW(c.validate(), DataError);
  c.tap_layer = 0;
  EXPECT_THROW(c.validate(), DataError);
}

TEST(ModelConfigTest, MissingKeysThrow) {
  const ModelConfig c = tiny_config();
  EXPECT_THROW(ModelConfig::from_map(c.to_map("m.")), DataError);
}

TEST(ModelConfigTest, MapRoundTripWithPrefix) {
  const ModelConfig c = tiny_config();
  EXPECT_EQ(ModelConfig::from_map(c.to_map("m."), "m."), c);
}

TEST(ModelConfigTest, FullScale) {
  const ModelConfig c = full_scale_config(218);
  EXPECT_EQ(c.num_patches(), 196u);
  EXPECT_EQ(c.patch_dim(), 55808u);
  EXPECT_EQ(c.enc_dim, 768u);
  EXPECT_EQ(c.enc_layers, 12u);
  EXPECT_EQ(c.enc_heads, 12u);
  EXPECT_EQ(c.dec_dim, 512u);
  EXPECT_EQ(c.dec_layers, 12u);
  EXPECT_EQ(c.dec_heads, 16u);
  EXPECT_EQ(c.tap_layer, 8u);
  EXPECT_NO_THROW(c.validate());
}

TEST(PatchifyTest, TokenCountsAndLengths) {
  Rng rng(41);
  const TokenSequence small = patchify(random_cube(4, 32, rng), 8);
  EXPECT_EQ(small.tokens.shape(), (nx::Shape{16, 256}));
  EXPECT_EQ(small.grid_size, 16u);
  EXPECT_THROW(patchify(random_cube(4, 30, rng), 8), DataError);
}

TEST(PatchifyTest, FullScaleStudentTokens) {
  const BandTable t = enmap_like_band_table();
  const HyperCube cube(218, 224, 224, t, std::vector<double>(218u * 224u * 224u, 0.5));
  const TokenSequence seq = patchify(cube, 16);
  EXPECT_EQ(seq.tokens.shape(), (nx::Shape{196, 55808}));
}

TEST(PatchifyTest, LayoutIsChannelRowColumn) {
  Rng rng(42);
  const HyperCube cube = random_cube(3, 8, rng);
  const TokenSequence seq = patchify(cube, 4);
  // patch 3 is grid (1, 1); element (c=2, i=1, j=3)
  EXPECT_EQ(seq.tokens[3 * 48 + (2 * 4 + 1) * 4 + 3], cube.at(2, 4 + 1, 4 + 3));
}

TEST(PatchifyTest, RoundTripIsBitExact) {
  Rng rng(43);
  for (int t = 0; t < 5; ++t) {
    const HyperCube cube = random_cube(5, 16, rng);
    const TokenSequence seq = patchify(cube, 4);
    EXPECT_EQ(unpatchify(seq.tokens, 5, 16, 16, 4), cube.data);
    EXPECT_EQ(unpatchify_tensor(seq.tokens, 5, 16, 16, 4).to_vector(), cube.data);
  }
}

TEST(PositionTableTest, FirstRowIsSinCosOfZero) {
  const auto t = sincos_position_table(2, 3, 8);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(t[i], 0.0);
    EXPECT_EQ(t[2 + i], 1.0);
    EXPECT_EQ(t[4 + i], 0.0);
    EXPECT_EQ(t[6 + i], 1.0);
  }
  EXPECT_DOUBLE_EQ(t[1 * 8 + 4], std::sin(1.0));  // row 0, col 1
  EXPECT_THROW(sincos_position_table(2, 2, 6), DataError);
}

TEST(EncoderTest, TapAtLastLayerIsPreNormFinalState) {
  ModelConfig c = tiny_config();
  c.tap_layer = c.enc_layers;
  const Encoder enc(c, 1);
  Rng rng(44);
  const EncoderOutput out = enc.encode(patchify(random_cube(4, 16, rng), 4));
  const Tensor manual = nx::layer_norm(out.tapped, Tensor::full({c.enc_dim}, 1.0), Tensor::zeros({c.enc_dim}));
  EXPECT_EQ(manual.to_vector(), out.latents.to_vector());
  EXPECT_NE(out.tapped.to_vector(), out.latents.to_vector());
}

TEST(EncoderTest, StopAtTapSkipsLaterBlocks) {
  const Encoder enc(tiny_config(), 2);
  Rng rng(45);
  const TokenSequence seq = patchify(random_cube(4, 16, rng), 4);
  const EncoderOutput full = enc.encode(seq), early = enc.encode(seq, true);
  EXPECT_EQ(full.tapped.to_vector(), early.tapped.to_vector());
  EXPECT_TRUE(early.latents.empty());
}

TEST(EncoderTest, PermutingVisibleTokensPermutesOutputs) {
  const Encoder enc(tiny_config(), 3);
  Rng rng(46);
  const TokenSequence seq = patchify(random_cube(4, 16, rng), 4);
  const std::vector<std::size_t> visible{1, 4, 6, 9, 13};
  const std::vector<std::size_t> shuffled{9, 1, 13, 6, 4};
  const EncoderOutput a = enc.encode(select_positions(seq, visible));
  const EncoderOutput b = enc.encode(select_positions(seq, shuffled));
  const std::size_t d = 16;
  for (std::size_t i = 0; i < shuffled.size(); ++i) {
    const std::size_t src = static_cast<std::size_t>(std::find(visible.begin(), visible.end(), shuffled[i]) - visible.begin());
    for (std::size_t j = 0; j < d; ++j) {
      EXPECT_NEAR(b.latents[i * d + j], a.latents[src * d + j], 1e-12);
      EXPECT_NEAR(b.tapped[i * d + j], a.tapped[src * d + j], 1e-12);
    }
  }
}

TEST(EncoderTest, WrongTokenWidthThrows) {
  const Encoder enc(tiny_config(), 4);
  Rng rng(47);
  EXPECT_THROW(enc.encode(patchify(random_cube(3, 16, rng), 4)), DataError);
}

TEST(DecoderTest, OutputShapeForAnyMask) {
  const ModelConfig c = tiny_config();
  const MaskedAutoencoder mae(c, 5);
  Rng rng(48);
  const TokenSequence seq = patchify(random_cube(4, 16, rng), 4);
  for (double r : {0.0, 0.25, 0.75}) {
    const auto mask = saliency::random_mask(16, r, 3);
    const auto vis = mask.visible_indices();
    const Tensor lat = mae.encoder().encode(select_positions(seq, vis)).latents;
    EXPECT_EQ(mae.decoder().decode(lat, vis).shape(), (nx::Shape{16, c.patch_dim()}));
  }
}

TEST(DecoderTest, FullyVisibleInputIgnoresMaskToken) {
  const ModelConfig c = tiny_config();
  MaskedAutoencoder mae(c, 6);
  Rng rng(49);
  const TokenSequence seq = patchify(random_cube(4, 16, rng), 4);
  const Tensor lat = mae.encoder().encode(seq).latents;
  const auto before = mae.decoder().decode(lat, seq.positions).to_vector();
  for (auto& p : mae.parameters()) {
    if (p.name == "decoder.mask_token") *p.tensor = Tensor::full(p.tensor->shape(), 5.0);
  }
  EXPECT_EQ(mae.decoder().decode(lat, seq.positions).to_vector(), before);
  const auto partial = std::vector<std::size_t>{0, 1, 2};
  const Tensor lat3 = mae.encoder().encode(select_positions(seq, partial)).latents;
  EXPECT_NO_THROW(mae.decoder().decode(lat3, partial));
}

TEST(DecoderTest, SeventyFivePercentOf196InsertsMaskTokens) {
  ModelConfig c = tiny_config();
  c.image_size = 224;
  c.patch_size = 16;
  c.in_channels = 1;
  ASSERT_EQ(c.num_patches(), 196u);
  const MaskedAutoencoder mae(c, 7);
  const auto mask = saliency::random_mask(196, 0.75, 1);
  EXPECT_EQ(mask.masked_count(), 147u);
  const auto vis = mask.visible_indices();
  ASSERT_EQ(vis.size(), 49u);
  const Tensor lat = Tensor::zeros({49, c.enc_dim});
  EXPECT_EQ(mae.decoder().decode(lat, vis).dim(0), 196u);
}

TEST(DecoderTest, InconsistentMaskThrows) {
  const ModelConfig c = tiny_config();
  const MaskedAutoencoder mae(c, 8);
  const Tensor lat = Tensor::zeros({3, c.enc_dim});
  EXPECT_THROW(mae.decoder().decode(lat, {0, 1}), DataError);
  EXPECT_THROW(mae.decoder().decode(lat, {0, 1, 1}), DataError);
  EXPECT_THROW(mae.decoder().decode(lat, {0, 1, 99}), DataError);
}

TEST(ModelTest, DeterministicPerSeed) {
  const ModelConfig c = tiny_config();
  MaskedAutoencoder a(c, 9), b(c, 9), d(c, 10);
  EXPECT_EQ(hash_parameters(a.parameters()), hash_parameters(b.parameters()));
  EXPECT_NE(hash_parameters(a.parameters()), hash_parameters(d.parameters()));
}

TEST(ModelTest, InitializationScheme) {
  MaskedAutoencoder mae(tiny_config(), 11);
  for (const auto& p : mae.parameters()) {
    const auto v = p.tensor->to_vector();
    const bool is_bias = p.name.ends_with(".bias");
    const bool is_gain = p.name.ends_with(".gain");
    for (double x : v) {
      if (is_bias) EXPECT_EQ(x, 0.0) << p.name;
      else if (is_gain) EXPECT_EQ(x, 1.0) << p.name;
      else EXPECT_LE(std::abs(x), 0.04) << p.name;
    }
    EXPECT_TRUE(p.tensor->requires_grad());
  }
}

TEST(ParameterCountTest, ClosedFormMatchesModels) {
  for (const ModelConfig& c : {tiny_config(), ModelConfig{}}) {
    MaskedAutoencoder mae(c, 12);
    EXPECT_EQ(count_parameters(mae.parameters()), autoencoder_parameter_count(c));
    Encoder enc(c, 12);
    EXPECT_EQ(count_parameters(enc.parameters()), encoder_parameter_count(c));
  }
  Encoder teacher(toy_teacher_config(), 12);
  EXPECT_EQ(count_parameters(teacher.parameters()), encoder_parameter_count(toy_teacher_config()));
}

TEST(ParameterCountTest, IndependentHandCount) {
  // in 4, p 4 -> patch dim 64; D 16, M 24, 2 layers
  const std::size_t block = (16 + 16) * 2 + (16 * 48 + 48) + (16 * 16 + 16) + (16 * 24 + 24) + (24 * 16 + 16);
  EXPECT_EQ(encoder_parameter_count(tiny_config()), 64 * 16 + 16 + 2 * block + 32);
}

TEST(TeacherTest, ReplicatesSixBandsIntoThreeGroups) {
  const Teacher t(toy_teacher_config(), kSurrogateTeacherSeed);
  const HyperCube a = aligned_scene(1);
  const HyperCube r = t.replicate(a);
  ASSERT_EQ(r.channels, 18u);
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t c = 0; c < 6; ++c) {
      const auto x = r.band(g * 6 + c), y = a.band(c);
      EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
    }
}

TEST(TeacherTest, WrongChannelCountThrows) {
  const Teacher t(toy_teacher_config(), kSurrogateTeacherSeed);
  Rng rng(50);
  EXPECT_THROW(t.forward(random_cube(5, 32, rng)), DataError);
}

TEST(TeacherTest, DeterministicAndFrozen) {
  const Teacher t(toy_teacher_config(), kSurrogateTeacherSeed);
  const HyperCube a = aligned_scene(2);
  const Tensor f1 = t.forward(a), f2 = t.forward(a);
  EXPECT_EQ(f1.to_vector(), f2.to_vector());
  EXPECT_EQ(f1.shape(), (nx::Shape{16, 48}));
  EXPECT_FALSE(f1.requires_grad());
}

TEST(TeacherTest, SaveLoadRoundTrip) {
  const Teacher t(toy_teacher_config(), kSurrogateTeacherSeed);
  const fs::path dir = testing::scratch_dir("teacher");
  t.save(dir / "teacher.hkd");
  const Teacher back = Teacher::load(dir / "teacher.hkd");
  EXPECT_EQ(back.parameter_hash(), t.parameter_hash());
  EXPECT_EQ(back.config(), t.config());
  const HyperCube a = aligned_scene(3);
  EXPECT_EQ(back.forward(a).to_vector(), t.forward(a).to_vector());
}

TEST(TeacherTest, MatchesGoldenFeatures) {
  const Teacher t(toy_teacher_config(), kSurrogateTeacherSeed);
  const auto features = t.forward(aligned_scene(kSurrogateTeacherSeed)).to_vector();
  const fs::path golden = fs::path(HYPERKD_TEST_DATA_DIR) / "teacher_seed42_features.txt";
  if (std::getenv("HYPERKD_WRITE_GOLDEN") != nullptr) {
    std::ofstream out(golden);
    out << "# surrogate teacher tap features, seed 42, scene seed 42, 16 x 48\n" << std::setprecision(17);
    for (double v : features) out << v << '\n';
    GTEST_SKIP() << "golden file written";
  }
  std::ifstream in(golden);
  ASSERT_TRUE(in) << "missing " << golden;
  std::string line;
  std::getline(in, line);
  std::vector<double> want;
  for (double v; in >> v;) want.push_back(v);
  ASSERT_EQ(want.size(), features.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(features[i], want[i], 1e-12) << i;
}

TEST(ProjectorTest, IdentityLeavesFeaturesUnchanged) {
  Rng rng(51);
  const Tensor f = testing::random_tensor({5, 8}, rng);
  EXPECT_EQ(Projector::identity(8).forward(f).to_vector(), f.to_vector());
  EXPECT_THROW(Projector::identity(8).forward(testing::random_tensor({5, 7}, rng)), DataError);
}

TEST(ProjectorTest, KdGradientReachesProjectorButNotTeacher) {
  Teacher teacher(toy_teacher_config(), kSurrogateTeacherSeed);
  Projector proj(48, 32, 3);
  const std::uint64_t h = teacher.parameter_hash();
  Rng rng(52);
  const Tensor student = testing::random_tensor({16, 32}, rng);
  const Tensor loss = objective::feature_kld(proj.forward(teacher.forward(aligned_scene(4))), student, 1.0);
  nx::backward(loss);
  double proj_grad = 0.0;
  for (const auto& p : proj.parameters())
    for (double g : p.tensor->grad()) proj_grad += std::abs(g);
  EXPECT_GT(proj_grad, 0.0);
  EXPECT_EQ(teacher.parameter_hash(), h);
}

TEST(ParameterIoTest, ExportImportRoundTrip) {
  MaskedAutoencoder a(tiny_config(), 13), b(tiny_config(), 14);
  Checkpoint ck;
  export_parameters(a.parameters(), ck);
  import_parameters(b.parameters(), ck);
  EXPECT_EQ(hash_parameters(a.parameters()), hash_parameters(b.parameters()));
  for (const auto& p : b.parameters()) EXPECT_TRUE(p.tensor->requires_grad());
  ck.arrays[0].shape = {1};
  EXPECT_THROW(import_parameters(b.parameters(), ck), DataError);
}

}  // namespace
}  // namespace hyperkd::vitmae
