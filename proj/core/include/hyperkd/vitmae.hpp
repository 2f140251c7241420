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
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hyperkd/checkpoint.hpp"
#include "hyperkd/hypercube.hpp"
#include "hyperkd/numerics/tensor.hpp"

namespace hyperkd::vitmae {

using numerics::Tensor;

struct ModelConfig {
  std::size_t in_channels = 32;
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t enc_dim = 32;
  std::size_t enc_layers = 4;
  std::size_t enc_heads = 4;
  std::size_t enc_mlp_dim = 64;
  std::size_t dec_dim = 32;
  std::size_t dec_layers = 2;
  std::size_t dec_heads = 4;
  std::size_t dec_mlp_dim = 64;
  std::size_t tap_layer = 3;  // 1-based encoder block whose output is tapped

  std::size_t grid_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid_side() * grid_side(); }
  std::size_t patch_dim() const { return patch_size * patch_size * in_channels; }

  /// Throws DataError on inconsistent dimensions.
  void validate(bool needs_decoder = true) const;

  std::map<std::string, std::string> to_map(const std::string& prefix = "") const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv, const std::string& prefix = "");

  bool operator==(const ModelConfig&) const = default;
};

/// ViT-MAE base configuration (12 x 768 encoder, 12 x 512 decoder, 16 px
/// patches, tap at block 8) for the given channel count.
ModelConfig full_scale_config(std::size_t in_channels);

/// Desk-scale surrogate teacher: 18 input channels, 4 x 48 encoder with 4
/// heads, tap at block 3. Wider than the toy student so the projector
/// changes width.
ModelConfig toy_teacher_config(std::size_t image_size = 32, std::size_t patch_size = 8);

/// Seed of the surrogate teacher's initialization.
inline constexpr std::uint64_t kSurrogateTeacherSeed = 42;

/// Rows of patch vectors plus the grid position of each row.
struct TokenSequence {
  Tensor tokens;                     // [n, dim]
  std::vector<std::size_t> positions;
  std::size_t grid_size = 0;         // N

  std::size_t size() const { return positions.size(); }
};

/// Row-major patches; each vector is ordered (channel, row-in-patch, col-in-patch).
TokenSequence patchify(const HyperCube& cube, std::size_t patch_size);
/// Inverse of patchify on raw values.
std::vector<double> unpatchify(const Tensor& patches, std::size_t channels, std::size_t height,
                               std::size_t width, std::size_t patch_size);
/// Differentiable inverse of patchify: [N, p*p*C] -> [C, H*W].
Tensor unpatchify_tensor(const Tensor& patches, std::size_t channels, std::size_t height,
                         std::size_t width, std::size_t patch_size);
/// Rows of `seq` at the given grid positions, in the given order.
TokenSequence select_positions(const TokenSequence& seq, const std::vector<std::size_t>& positions);

/// Fixed 2D sine-cosine table, [rows*cols, dim]; dim must be divisible by 4.
std::vector<double> sincos_position_table(std::size_t rows, std::size_t cols, std::size_t dim);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Tensor forward(const Tensor& x) const;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
  Tensor forward(const Tensor& x) const;
};

/// Pre-norm transformer block: x + attn(ln1(x)), then x + mlp(ln2(x)).
struct Block {
  LayerNormParams ln1, ln2;
  Linear qkv, proj, fc1, fc2;
  std::size_t heads = 1;
  Tensor forward(const Tensor& x) const;
};

struct NamedParam {
  std::string name;
  Tensor* tensor;
};

struct EncoderOutput {
  Tensor latents;  // after the final norm
  Tensor tapped;   // output of block tap_layer, before any norm
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(const ModelConfig& config, std::uint64_t seed);

  /// Runs the supplied tokens (raw patch vectors). With stop_at_tap the
  /// blocks after the tap are skipped and latents is left empty.
  EncoderOutput encode(const TokenSequence& tokens, bool stop_at_tap = false) const;

  const ModelConfig& config() const { return config_; }
  std::vector<NamedParam> parameters(const std::string& prefix = "encoder.");

 private:
  ModelConfig config_;
  Linear patch_embed_;
  std::vector<Block> blocks_;
  LayerNormParams norm_;
  Tensor pos_table_;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(const ModelConfig& config, std::uint64_t seed);

  /// Scatters latents of the visible positions into a full-length sequence,
  /// fills the remaining positions with the mask token, adds position
  /// encodings, decodes, and predicts [N, patch_dim].
  Tensor decode(const Tensor& latents, const std::vector<std::size_t>& visible_positions) const;

  const ModelConfig& config() const { return config_; }
  std::vector<NamedParam> parameters(const std::string& prefix = "decoder.");

 private:
  ModelConfig config_;
  Linear embed_;
  Tensor mask_token_;
  std::vector<Block> blocks_;
  LayerNormParams norm_;
  Linear pred_;
  Tensor pos_table_;
};

/// Encoder + decoder.
class MaskedAutoencoder {
 public:
  MaskedAutoencoder() = default;
  MaskedAutoencoder(const ModelConfig& config, std::uint64_t seed);

  Encoder& encoder() { return encoder_; }
  const Encoder& encoder() const { return encoder_; }
  const Decoder& decoder() const { return decoder_; }
  const ModelConfig& config() const { return config_; }

  std::vector<NamedParam> parameters();

 private:
  ModelConfig config_;
  Encoder encoder_;
  Decoder decoder_;
};

/// Frozen few-band teacher. Its encoder takes `timestamps` copies of the
/// aligned cube stacked along channels (6 bands x 3 = 18 by default).
class Teacher {
 public:
  Teacher() = default;
  /// Seeded surrogate with the same initialization as the student.
  Teacher(const ModelConfig& config, std::uint64_t seed, std::size_t timestamps = 3);

  /// Loads encoder weights from a checkpoint file written by save_teacher().
  static Teacher load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Channel-replicated teacher input, [timestamps * C, H, W] as a cube.
  HyperCube replicate(const HyperCube& aligned) const;
  /// Tap-layer features [N, enc_dim] of the unmasked aligned cube.
  Tensor forward(const HyperCube& aligned) const;

  const ModelConfig& config() const { return encoder_.config(); }
  std::size_t timestamps() const { return timestamps_; }
  /// FNV-1a over the bit patterns of all parameters.
  std::uint64_t parameter_hash() const;

 private:
  Encoder encoder_;
  std::size_t timestamps_ = 3;
};

/// Learned affine map from teacher feature width to student feature width.
class Projector {
 public:
  Projector() = default;
  Projector(std::size_t teacher_dim, std::size_t student_dim, std::uint64_t seed);
  static Projector identity(std::size_t dim);

  Tensor forward(const Tensor& teacher_features) const;
  std::vector<NamedParam> parameters(const std::string& prefix = "projector.");

 private:
  Linear map_;
};

/// Parameter count of an encoder / full autoencoder for a config.
std::size_t encoder_parameter_count(const ModelConfig& config);
std::size_t autoencoder_parameter_count(const ModelConfig& config);
std::size_t count_parameters(const std::vector<NamedParam>& params);

/// Makes every listed tensor a gradient-accumulating leaf (true) or a
/// constant (false), keeping values.
void set_trainable(const std::vector<NamedParam>& params, bool trainable);
std::uint64_t hash_parameters(const std::vector<NamedParam>& params);

void export_parameters(const std::vector<NamedParam>& params, Checkpoint& ckpt);
/// Replaces values from matching arrays; trainability is preserved.
void import_parameters(const std::vector<NamedParam>& params, const Checkpoint& ckpt);

}  // namespace hyperkd::vitmae
