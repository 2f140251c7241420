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

#include "hyperkd/vitmae.hpp"

#include <bit>
#include <cmath>
#include <set>

#include "hyperkd/error.hpp"
#include "hyperkd/rng.hpp"

namespace hyperkd::vitmae {

namespace nx = hyperkd::numerics;

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw DataError("vitmae", msg); }

Tensor trunc_normal(nx::Shape shape, Rng& rng, double stddev = 0.02) {
  std::vector<double> v(nx::shape_size(shape));
  for (auto& x : v) x = rng.truncated_normal(stddev);
  return Tensor::parameter(std::move(shape), std::move(v));
}

Linear make_linear(std::size_t in, std::size_t out, Rng& rng) {
  return {trunc_normal({in, out}, rng), Tensor::parameter({out}, std::vector<double>(out, 0.0))};
}

LayerNormParams make_norm(std::size_t dim) {
  return {Tensor::parameter({dim}, std::vector<double>(dim, 1.0)),
          Tensor::parameter({dim}, std::vector<double>(dim, 0.0))};
}

Block make_block(std::size_t dim, std::size_t heads, std::size_t mlp, Rng& rng) {
  Block b;
  b.ln1 = make_norm(dim);
  b.qkv = make_linear(dim, 3 * dim, rng);
  b.proj = make_linear(dim, dim, rng);
  b.ln2 = make_norm(dim);
  b.fc1 = make_linear(dim, mlp, rng);
  b.fc2 = make_linear(mlp, dim, rng);
  b.heads = heads;
  return b;
}

void add_linear(std::vector<NamedParam>& out, const std::string& name, Linear& l) {
  out.push_back({name + ".weight", &l.weight});
  out.push_back({name + ".bias", &l.bias});
}

void add_norm(std::vector<NamedParam>& out, const std::string& name, LayerNormParams& n) {
  out.push_back({name + ".gain", &n.gain});
  out.push_back({name + ".bias", &n.bias});
}

void add_block(std::vector<NamedParam>& out, const std::string& name, Block& b) {
  add_norm(out, name + ".ln1", b.ln1);
  add_linear(out, name + ".qkv", b.qkv);
  add_linear(out, name + ".proj", b.proj);
  add_norm(out, name + ".ln2", b.ln2);
  add_linear(out, name + ".fc1", b.fc1);
  add_linear(out, name + ".fc2", b.fc2);
}

std::size_t block_params(std::size_t d, std::size_t m) { return 4 * d * d + 2 * d * m + 9 * d + m; }

std::uint64_t fnv1a(std::uint64_t h, std::span<const double> values) {
  for (double v : values) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace

// ---- config --------------------------------------------------------------------

void ModelConfig::validate(bool needs_decoder) const {
  if (in_channels == 0) config_error("in_channels must be positive");
  if (patch_size == 0 || image_size % patch_size != 0) config_error("patch_size must divide image_size");
  if (enc_dim == 0 || enc_heads == 0 || enc_dim % enc_heads != 0) config_error("enc_dim must be divisible by enc_heads");
  if (enc_dim % 4 != 0) config_error("enc_dim must be divisible by 4 for 2D sine-cosine positions");
  if (enc_layers == 0) config_error("enc_layers must be positive");
  if (tap_layer < 1 || tap_layer > enc_layers) config_error("tap_layer must lie in [1, enc_layers]");
  if (needs_decoder) {
    if (dec_dim == 0 || dec_heads == 0 || dec_dim % dec_heads != 0) config_error("dec_dim must be divisible by dec_heads");
    if (dec_dim % 4 != 0) config_error("dec_dim must be divisible by 4 for 2D sine-cosine positions");
  }
}

std::map<std::string, std::string> ModelConfig::to_map(const std::string& prefix) const {
  return {{prefix + "in_channels", std::to_string(in_channels)},
          {prefix + "image_size", std::to_string(image_size)},
          {prefix + "patch_size", std::to_string(patch_size)},
          {prefix + "enc_dim", std::to_string(enc_dim)},
          {prefix + "enc_layers", std::to_string(enc_layers)},
          {prefix + "enc_heads", std::to_string(enc_heads)},
          {prefix + "enc_mlp_dim", std::to_string(enc_mlp_dim)},
          {prefix + "dec_dim", std::to_string(dec_dim)},
          {prefix + "dec_layers", std::to_string(dec_layers)},
          {prefix + "dec_heads", std::to_string(dec_heads)},
          {prefix + "dec_mlp_dim", std::to_string(dec_mlp_dim)},
          {prefix + "tap_layer", std::to_string(tap_layer)}};
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv, const std::string& prefix) {
  ModelConfig c;
  auto get = [&](const char* key, std::size_t& field) {
    auto it = kv.find(prefix + key);
    if (it == kv.end()) config_error("model config is missing '" + prefix + key + "'");
    try {
      field = static_cast<std::size_t>(std::stoull(it->second));
    } catch (const std::exception&) {
      config_error("model config key '" + prefix + key + "' is not an integer");
    }
  };
  get("in_channels", c.in_channels);
  get("image_size", c.image_size);
  get("patch_size", c.patch_size);
  get("enc_dim", c.enc_dim);
  get("enc_layers", c.enc_layers);
  get("enc_heads", c.enc_heads);
  get("enc_mlp_dim", c.enc_mlp_dim);
  get("dec_dim", c.dec_dim);
  get("dec_layers", c.dec_layers);
  get("dec_heads", c.dec_heads);
  get("dec_mlp_dim", c.dec_mlp_dim);
  get("tap_layer", c.tap_layer);
  return c;
}

ModelConfig full_scale_config(std::size_t in_channels) {
  ModelConfig c;
  c.in_channels = in_channels;
  c.image_size = 224;
  c.patch_size = 16;
  c.enc_dim = 768;
  c.enc_layers = 12;
  c.enc_heads = 12;
  c.enc_mlp_dim = 3072;
  c.dec_dim = 512;
  c.dec_layers = 12;
  c.dec_heads = 16;
  c.dec_mlp_dim = 2048;
  c.tap_layer = 8;
  return c;
}

ModelConfig toy_teacher_config(std::size_t image_size, std::size_t patch_size) {
  ModelConfig c;
  c.in_channels = 18;
  c.image_size = image_size;
  c.patch_size = patch_size;
  c.enc_dim = 48;
  c.enc_layers = 4;
  c.enc_heads = 4;
  c.enc_mlp_dim = 96;
  c.dec_dim = 48;
  c.dec_layers = 1;
  c.dec_heads = 4;
  c.dec_mlp_dim = 96;
  c.tap_layer = 3;
  return c;
}

// ---- patches -------------------------------------------------------------------

namespace {

// Flat cube index for element k of patch `patch` ([N, p*p*C] row-major).
std::vector<std::size_t> patch_index_map(std::size_t C, std::size_t H, std::size_t W, std::size_t p) {
  const std::size_t cols = W / p, rows = H / p;
  const std::size_t dim = p * p * C;
  std::vector<std::size_t> map(rows * cols * dim);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t q = 0; q < cols; ++q)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < p; ++j)
            map[(r * cols + q) * dim + (c * p + i) * p + j] = (c * H + r * p + i) * W + q * p + j;
  return map;
}

void check_divisible(std::size_t H, std::size_t W, std::size_t p) {
  if (p == 0 || H % p != 0 || W % p != 0) {
    config_error("patch size " + std::to_string(p) + " does not divide " + std::to_string(H) + "x" + std::to_string(W));
  }
}

}  // namespace

TokenSequence patchify(const HyperCube& cube, std::size_t p) {
  check_divisible(cube.height, cube.width, p);
  const auto map = patch_index_map(cube.channels, cube.height, cube.width, p);
  std::vector<double> values(map.size());
  for (std::size_t k = 0; k < map.size(); ++k) values[k] = cube.data[map[k]];
  const std::size_t n = (cube.height / p) * (cube.width / p);
  TokenSequence seq;
  seq.tokens = Tensor::constant({n, p * p * cube.channels}, std::move(values));
  seq.positions.resize(n);
  for (std::size_t i = 0; i < n; ++i) seq.positions[i] = i;
  seq.grid_size = n;
  return seq;
}

std::vector<double> unpatchify(const Tensor& patches, std::size_t C, std::size_t H, std::size_t W, std::size_t p) {
  check_divisible(H, W, p);
  const auto map = patch_index_map(C, H, W, p);
  if (patches.size() != map.size()) config_error("patch tensor size does not match cube dims");
  std::vector<double> out(C * H * W);
  for (std::size_t k = 0; k < map.size(); ++k) out[map[k]] = patches[k];
  return out;
}

Tensor unpatchify_tensor(const Tensor& patches, std::size_t C, std::size_t H, std::size_t W, std::size_t p) {
  check_divisible(H, W, p);
  const auto map = patch_index_map(C, H, W, p);
  if (patches.size() != map.size()) config_error("patch tensor size does not match cube dims");
  std::vector<std::size_t> inverse(map.size());
  for (std::size_t k = 0; k < map.size(); ++k) inverse[map[k]] = k;
  return nx::gather(patches, std::move(inverse), {C, H * W});
}

TokenSequence select_positions(const TokenSequence& seq, const std::vector<std::size_t>& positions) {
  const std::size_t dim = seq.tokens.dim(1);
  std::vector<std::size_t> rows;
  for (std::size_t pos : positions) {
    std::size_t row = seq.positions.size();
    for (std::size_t i = 0; i < seq.positions.size(); ++i) {
      if (seq.positions[i] == pos) {
        row = i;
        break;
      }
    }
    if (row == seq.positions.size()) config_error("position " + std::to_string(pos) + " not in token sequence");
    rows.push_back(row);
  }
  std::vector<std::size_t> idx;
  idx.reserve(rows.size() * dim);
  for (std::size_t r : rows)
    for (std::size_t j = 0; j < dim; ++j) idx.push_back(r * dim + j);
  TokenSequence out;
  out.tokens = nx::gather(seq.tokens, std::move(idx), {rows.size(), dim});
  out.positions = positions;
  out.grid_size = seq.grid_size;
  return out;
}

std::vector<double> sincos_position_table(std::size_t rows, std::size_t cols, std::size_t dim) {
  if (dim % 4 != 0) config_error("position table width must be divisible by 4");
  const std::size_t quarter = dim / 4;
  std::vector<double> table(rows * cols * dim);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double* row = table.data() + (r * cols + c) * dim;
      for (std::size_t i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
        row[i] = std::sin(static_cast<double>(r) * omega);
        row[quarter + i] = std::cos(static_cast<double>(r) * omega);
        row[2 * quarter + i] = std::sin(static_cast<double>(c) * omega);
        row[3 * quarter + i] = std::cos(static_cast<double>(c) * omega);
      }
    }
  }
  return table;
}

// ---- layers --------------------------------------------------------------------

Tensor Linear::forward(const Tensor& x) const { return nx::add_rowwise(nx::matmul(x, weight), bias); }

Tensor LayerNormParams::forward(const Tensor& x) const { return nx::layer_norm(x, gain, bias); }

Tensor Block::forward(const Tensor& x) const {
  const std::size_t dim = x.dim(1);
  const std::size_t head_dim = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  const Tensor qkv_out = qkv.forward(ln1.forward(x));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor q = nx::slice_cols(qkv_out, h * head_dim, head_dim);
    const Tensor k = nx::slice_cols(qkv_out, dim + h * head_dim, head_dim);
    const Tensor v = nx::slice_cols(qkv_out, 2 * dim + h * head_dim, head_dim);
    const Tensor att = nx::softmax(nx::scale(nx::matmul(q, nx::transpose(k)), scale), 1);
    outs.push_back(nx::matmul(att, v));
  }
  const Tensor attended = heads == 1 ? outs.front() : nx::concat_cols(outs);
  const Tensor h1 = nx::add(x, proj.forward(attended));
  return nx::add(h1, fc2.forward(nx::gelu(fc1.forward(ln2.forward(h1)))));
}

// ---- encoder -------------------------------------------------------------------

Encoder::Encoder(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate(false);
  Rng rng(Rng::derive(seed, {0x656e63}));
  patch_embed_ = make_linear(config_.patch_dim(), config_.enc_dim, rng);
  for (std::size_t l = 0; l < config_.enc_layers; ++l) {
    blocks_.push_back(make_block(config_.enc_dim, config_.enc_heads, config_.enc_mlp_dim, rng));
  }
  norm_ = make_norm(config_.enc_dim);
  pos_table_ = Tensor::constant({config_.num_patches(), config_.enc_dim},
                                sincos_position_table(config_.grid_side(), config_.grid_side(), config_.enc_dim));
}

EncoderOutput Encoder::encode(const TokenSequence& tokens, bool stop_at_tap) const {
  if (tokens.tokens.rank() != 2 || tokens.tokens.dim(1) != config_.patch_dim()) {
    config_error("encoder expects tokens of width " + std::to_string(config_.patch_dim()) + ", got " +
                 nx::shape_string(tokens.tokens.shape()));
  }
  if (tokens.grid_size != config_.num_patches()) config_error("token grid size does not match the encoder config");
  const std::size_t d = config_.enc_dim;
  std::vector<std::size_t> pos_idx;
  pos_idx.reserve(tokens.size() * d);
  for (std::size_t p : tokens.positions) {
    if (p >= config_.num_patches()) config_error("token position out of range");
    for (std::size_t j = 0; j < d; ++j) pos_idx.push_back(p * d + j);
  }
  const Tensor pos = nx::gather(pos_table_, std::move(pos_idx), {tokens.size(), d});
  Tensor x = nx::add(patch_embed_.forward(tokens.tokens), pos);
  EncoderOutput out;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    x = blocks_[l].forward(x);
    if (l + 1 == config_.tap_layer) {
      out.tapped = x;
      if (stop_at_tap) return out;
    }
  }
  out.latents = norm_.forward(x);
  return out;
}

std::vector<NamedParam> Encoder::parameters(const std::string& prefix) {
  std::vector<NamedParam> out;
  add_linear(out, prefix + "patch_embed", patch_embed_);
  for (std::size_t l = 0; l < blocks_.size(); ++l) add_block(out, prefix + "blocks." + std::to_string(l), blocks_[l]);
  add_norm(out, prefix + "norm", norm_);
  return out;
}

// ---- decoder -------------------------------------------------------------------

Decoder::Decoder(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate(true);
  Rng rng(Rng::derive(seed, {0x646563}));
  embed_ = make_linear(config_.enc_dim, config_.dec_dim, rng);
  mask_token_ = trunc_normal({1, config_.dec_dim}, rng);
  for (std::size_t l = 0; l < config_.dec_layers; ++l) {
    blocks_.push_back(make_block(config_.dec_dim, config_.dec_heads, config_.dec_mlp_dim, rng));
  }
  norm_ = make_norm(config_.dec_dim);
  pred_ = make_linear(config_.dec_dim, config_.patch_dim(), rng);
  pos_table_ = Tensor::constant({config_.num_patches(), config_.dec_dim},
                                sincos_position_table(config_.grid_side(), config_.grid_side(), config_.dec_dim));
}

Tensor Decoder::decode(const Tensor& latents, const std::vector<std::size_t>& visible) const {
  const std::size_t n = config_.num_patches();
  const std::size_t e = config_.dec_dim;
  if (latents.rank() != 2 || latents.dim(0) != visible.size() || latents.dim(1) != config_.enc_dim) {
    config_error("latents do not match the visible positions");
  }
  std::vector<long> row_of(n, -1);
  for (std::size_t i = 0; i < visible.size(); ++i) {
    if (visible[i] >= n || row_of[visible[i]] >= 0) config_error("inconsistent mask: bad or repeated visible position");
    row_of[visible[i]] = static_cast<long>(i);
  }
  const std::size_t n_mask = n - visible.size();
  std::vector<Tensor> parts;
  if (!visible.empty()) parts.push_back(embed_.forward(latents));
  if (n_mask > 0) {
    std::vector<std::size_t> rep(n_mask * e);
    for (std::size_t i = 0; i < n_mask; ++i)
      for (std::size_t j = 0; j < e; ++j) rep[i * e + j] = j;
    parts.push_back(nx::gather(mask_token_, std::move(rep), {n_mask, e}));
  }
  const Tensor stacked = parts.size() == 1 ? parts.front() : nx::concat_rows(parts);
  std::vector<std::size_t> order(n * e);
  std::size_t next_mask = visible.size();
  for (std::size_t pos = 0; pos < n; ++pos) {
    const std::size_t src = row_of[pos] >= 0 ? static_cast<std::size_t>(row_of[pos]) : next_mask++;
    for (std::size_t j = 0; j < e; ++j) order[pos * e + j] = src * e + j;
  }
  Tensor x = nx::add(nx::gather(stacked, std::move(order), {n, e}), pos_table_);
  for (const auto& b : blocks_) x = b.forward(x);
  return pred_.forward(norm_.forward(x));
}

std::vector<NamedParam> Decoder::parameters(const std::string& prefix) {
  std::vector<NamedParam> out;
  add_linear(out, prefix + "embed", embed_);
  out.push_back({prefix + "mask_token", &mask_token_});
  for (std::size_t l = 0; l < blocks_.size(); ++l) add_block(out, prefix + "blocks." + std::to_string(l), blocks_[l]);
  add_norm(out, prefix + "norm", norm_);
  add_linear(out, prefix + "pred", pred_);
  return out;
}

// ---- autoencoder ---------------------------------------------------------------

MaskedAutoencoder::MaskedAutoencoder(const ModelConfig& config, std::uint64_t seed)
    : config_(config), encoder_(config, seed), decoder_(config, seed) {}

std::vector<NamedParam> MaskedAutoencoder::parameters() {
  auto out = encoder_.parameters("encoder.");
  auto dec = decoder_.parameters("decoder.");
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

// ---- teacher -------------------------------------------------------------------

Teacher::Teacher(const ModelConfig& config, std::uint64_t seed, std::size_t timestamps)
    : encoder_(config, seed), timestamps_(timestamps) {
  if (timestamps_ == 0 || config.in_channels % timestamps_ != 0) {
    config_error("teacher in_channels must be a multiple of the timestamp count");
  }
  set_trainable(encoder_.parameters(), false);
}

HyperCube Teacher::replicate(const HyperCube& aligned) const {
  const std::size_t per = config().in_channels / timestamps_;
  if (aligned.channels != per) {
    throw DataError("vitmae", "teacher expects a " + std::to_string(per) + "-band aligned cube, got " +
                                  std::to_string(aligned.channels) + " bands");
  }
  // Copies share wavelengths, which a BandTable would reorder; label the
  // stacked channels with distinct ascending placeholder ranges instead.
  std::vector<BandRange> ranges;
  for (std::size_t c = 0; c < per * timestamps_; ++c) {
    ranges.push_back({static_cast<int>(c + 1), 400.0 + static_cast<double>(c), 400.5 + static_cast<double>(c)});
  }
  std::vector<double> values;
  values.reserve(per * timestamps_ * aligned.plane_size());
  for (std::size_t t = 0; t < timestamps_; ++t) values.insert(values.end(), aligned.data.begin(), aligned.data.end());
  HyperCube out(per * timestamps_, aligned.height, aligned.width, BandTable("teacher-input", std::move(ranges)),
                std::move(values));
  out.tile_id = aligned.tile_id;
  out.split = aligned.split;
  out.normalized = aligned.normalized;
  return out;
}

Tensor Teacher::forward(const HyperCube& aligned) const {
  const HyperCube input = replicate(aligned);
  if (input.height != config().image_size || input.width != config().image_size) {
    throw DataError("vitmae", "teacher image size does not match the aligned cube");
  }
  return encoder_.encode(patchify(input, config().patch_size), true).tapped;
}

std::uint64_t Teacher::parameter_hash() const {
  auto& self = const_cast<Encoder&>(encoder_);
  return hash_parameters(self.parameters());
}

void Teacher::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.config = config().to_map("teacher.");
  ckpt.config["teacher.timestamps"] = std::to_string(timestamps_);
  export_parameters(const_cast<Encoder&>(encoder_).parameters("encoder."), ckpt);
  save_checkpoint(ckpt, path);
}

Teacher Teacher::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  const ModelConfig cfg = ModelConfig::from_map(ckpt.config, "teacher.");
  std::size_t ts = 3;
  if (auto it = ckpt.config.find("teacher.timestamps"); it != ckpt.config.end()) ts = std::stoull(it->second);
  Teacher t(cfg, 0, ts);
  import_parameters(t.encoder_.parameters("encoder."), ckpt);
  return t;
}

// ---- projector -----------------------------------------------------------------

Projector::Projector(std::size_t teacher_dim, std::size_t student_dim, std::uint64_t seed) {
  Rng rng(Rng::derive(seed, {0x70726f6a}));
  map_ = make_linear(teacher_dim, student_dim, rng);
}

Projector Projector::identity(std::size_t dim) {
  Projector p;
  std::vector<double> w(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) w[i * dim + i] = 1.0;
  p.map_ = {Tensor::parameter({dim, dim}, std::move(w)), Tensor::parameter({dim}, std::vector<double>(dim, 0.0))};
  return p;
}

Tensor Projector::forward(const Tensor& teacher_features) const {
  if (teacher_features.rank() != 2 || teacher_features.dim(1) != map_.weight.dim(0)) {
    config_error("projector expects features of width " + std::to_string(map_.weight.dim(0)));
  }
  return map_.forward(teacher_features);
}

std::vector<NamedParam> Projector::parameters(const std::string& prefix) {
  std::vector<NamedParam> out;
  add_linear(out, prefix + "map", map_);
  return out;
}

// ---- parameter utilities -------------------------------------------------------

std::size_t encoder_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.enc_dim;
  return c.patch_dim() * d + d + c.enc_layers * block_params(d, c.enc_mlp_dim) + 2 * d;
}

std::size_t autoencoder_parameter_count(const ModelConfig& c) {
  const std::size_t e = c.dec_dim;
  const std::size_t dec = c.enc_dim * e + e + e + c.dec_layers * block_params(e, c.dec_mlp_dim) + 2 * e +
                          e * c.patch_dim() + c.patch_dim();
  return encoder_parameter_count(c) + dec;
}

std::size_t count_parameters(const std::vector<NamedParam>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor->size();
  return n;
}

void set_trainable(const std::vector<NamedParam>& params, bool trainable) {
  for (const auto& p : params) {
    *p.tensor = trainable ? Tensor::parameter(p.tensor->shape(), p.tensor->to_vector())
                          : Tensor::constant(p.tensor->shape(), p.tensor->to_vector());
  }
}

std::uint64_t hash_parameters(const std::vector<NamedParam>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) h = fnv1a(h, p.tensor->data());
  return h;
}

void export_parameters(const std::vector<NamedParam>& params, Checkpoint& ckpt) {
  for (const auto& p : params) ckpt.arrays.push_back({p.name, p.tensor->shape(), p.tensor->to_vector()});
}

void import_parameters(const std::vector<NamedParam>& params, const Checkpoint& ckpt) {
  for (const auto& p : params) {
    const NamedArray& a = ckpt.array(p.name);
    if (a.shape != p.tensor->shape()) {
      throw DataError("vitmae", "parameter '" + p.name + "' has shape " + nx::shape_string(a.shape) +
                                    " in the checkpoint, expected " + nx::shape_string(p.tensor->shape()));
    }
    *p.tensor = p.tensor->requires_grad() ? Tensor::parameter(a.shape, a.values) : Tensor::constant(a.shape, a.values);
  }
}

}  // namespace hyperkd::vitmae
