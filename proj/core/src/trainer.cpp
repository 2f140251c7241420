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


#include "hyperkd/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

#include "hyperkd/error.hpp"
#include "hyperkd/rng.hpp"

namespace hyperkd::trainer {
namespace {

namespace nx = hyperkd::numerics;
namespace fs = std::filesystem;

[[noreturn]] void config_error(const std::string& msg) { throw DataError("trainer", msg); }

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
    config_error("key '" + key + "' expects a non-negative integer, got '" + value + "'");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
    config_error("key '" + key + "' expects a non-negative integer, got '" + value + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size() || !std::isfinite(out)) {
    config_error("key '" + key + "' expects a finite number, got '" + value + "'");
  }
  return out;
}

const char* overlap_name(OverlapMode m) { return m == OverlapMode::kContained ? "contained" : "intersecting"; }

OverlapMode parse_overlap(const std::string& s) {
  if (s == "contained") return OverlapMode::kContained;
  if (s == "intersecting") return OverlapMode::kIntersecting;
  config_error("unknown overlap_mode '" + s + "' (expected contained or intersecting)");
}

// Rethrows component enum parse failures as config errors naming the key.
template <typename F>
auto parse_enum(const std::string& key, const std::string& value, F parse) {
  try {
    return parse(value);
  } catch (const Error& e) {
    config_error("key '" + key + "': " + e.what());
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string csv_value(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("trainer", "cannot write " + path.string());
  out << text;
  if (!out) throw DataError("trainer", "failed writing " + path.string());
}

// Row subset of a [n, d] tensor as a constant.
Tensor constant_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  const std::size_t d = t.dim(1);
  const auto data = t.data();
  std::vector<double> out;
  out.reserve(rows.size() * d);
  for (std::size_t r : rows) out.insert(out.end(), data.begin() + static_cast<long>(r * d),
                                        data.begin() + static_cast<long>((r + 1) * d));
  return Tensor::constant({rows.size(), d}, std::move(out));
}

// Total in the same term order as objective::total_loss.
void combine(LossBreakdown& b, const objective::LossWeights& w) {
  b.l_recon = w.lambda1 * b.l_mse + w.lambda2 * b.l_ssim;
  b.l_total = w.alpha * w.lambda1 * b.l_mse + w.alpha * w.lambda2 * b.l_ssim + w.beta * b.l_kd;
}

}  // namespace

// ---- config ------------------------------------------------------------------

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "preset",        "epochs",       "batch_size",   "micro_batch",        "base_lr",
      "warmup_epochs", "mask_ratio",   "mask_method",  "salient_mode",       "random_switch_epoch",
      "lambda1",       "lambda2",      "alpha",        "beta",               "temperature",
      "recon_loss",    "huber_delta",  "recon_region", "kd_function",        "ssim_window",
      "in_channels",   "image_size",   "patch_size",   "enc_dim",            "enc_layers",
      "enc_heads",     "enc_mlp_dim",  "dec_dim",      "dec_layers",         "dec_heads",
      "dec_mlp_dim",   "tap_layer",    "teacher",      "teacher_timestamps", "overlap_mode",
      "eval_every",    "checkpoint_every", "seed"};
  return keys;
}

void TrainConfig::validate() const {
  if (epochs == 0) config_error("epochs must be at least 1");
  if (batch_size == 0) config_error("batch_size must be at least 1");
  if (warmup_epochs >= epochs) config_error("warmup_epochs must be smaller than epochs");
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) config_error("mask_ratio must lie in [0, 1]");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) config_error("base_lr must be positive");
  if (!(huber_delta > 0.0)) config_error("huber_delta must be positive");
  if (ssim_window != 0 && (ssim_window < 3 || ssim_window % 2 == 0)) {
    config_error("ssim_window must be 0 or an odd size of at least 3");
  }
  if (teacher_timestamps == 0) config_error("teacher_timestamps must be at least 1");
  if (teacher.empty()) config_error("teacher must be 'surrogate' or a checkpoint path");
  weights.validate();
  model.validate();
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  std::map<std::string, std::string> kv = model.to_map();
  kv["preset"] = preset;
  kv["epochs"] = std::to_string(epochs);
  kv["batch_size"] = std::to_string(batch_size);
  kv["micro_batch"] = std::to_string(micro_batch);
  kv["base_lr"] = format_double(base_lr);
  kv["warmup_epochs"] = std::to_string(warmup_epochs);
  kv["mask_ratio"] = format_double(mask_ratio);
  kv["mask_method"] = saliency::method_name(mask_method);
  kv["salient_mode"] = saliency::mask_mode_name(salient_mode);
  kv["random_switch_epoch"] = random_switch_epoch ? std::to_string(*random_switch_epoch) : "none";
  kv["lambda1"] = format_double(weights.lambda1);
  kv["lambda2"] = format_double(weights.lambda2);
  kv["alpha"] = format_double(weights.alpha);
  kv["beta"] = format_double(weights.beta);
  kv["temperature"] = format_double(weights.temperature);
  kv["recon_loss"] = objective::recon_kind_name(recon_loss);
  kv["huber_delta"] = format_double(huber_delta);
  kv["recon_region"] = objective::region_name(recon_region);
  kv["kd_function"] = objective::kd_function_name(kd_function);
  kv["ssim_window"] = std::to_string(ssim_window);
  kv["teacher"] = teacher;
  kv["teacher_timestamps"] = std::to_string(teacher_timestamps);
  kv["overlap_mode"] = overlap_name(overlap_mode);
  kv["eval_every"] = std::to_string(eval_every);
  kv["checkpoint_every"] = std::to_string(checkpoint_every);
  kv["seed"] = std::to_string(seed);
  return kv;
}

void TrainConfig::apply(const std::map<std::string, std::string>& kv) {
  const auto& known = config_keys();
  for (const auto& [k, v] : kv) {
    if (std::find(known.begin(), known.end(), k) == known.end()) config_error("unknown config key '" + k + "'");
  }
  // A preset resets every field before the remaining keys override it.
  if (auto it = kv.find("preset"); it != kv.end() && it->second != "custom") *this = trainer::preset(it->second);
  for (const auto& [k, v] : kv) {
    if (k == "preset") preset = v;
    else if (k == "epochs") epochs = parse_size(k, v);
    else if (k == "batch_size") batch_size = parse_size(k, v);
    else if (k == "micro_batch") micro_batch = parse_size(k, v);
    else if (k == "base_lr") base_lr = parse_double(k, v);
    else if (k == "warmup_epochs") warmup_epochs = parse_size(k, v);
    else if (k == "mask_ratio") mask_ratio = parse_double(k, v);
    else if (k == "mask_method") mask_method = parse_enum(k, v, saliency::parse_method);
    else if (k == "salient_mode") salient_mode = parse_enum(k, v, saliency::parse_mask_mode);
    else if (k == "random_switch_epoch") {
      if (v == "none") random_switch_epoch.reset();
      else random_switch_epoch = parse_size(k, v);
    }
    else if (k == "lambda1") weights.lambda1 = parse_double(k, v);
    else if (k == "lambda2") weights.lambda2 = parse_double(k, v);
    else if (k == "alpha") weights.alpha = parse_double(k, v);
    else if (k == "beta") weights.beta = parse_double(k, v);
    else if (k == "temperature") weights.temperature = parse_double(k, v);
    else if (k == "recon_loss") recon_loss = parse_enum(k, v, objective::parse_recon_kind);
    else if (k == "huber_delta") huber_delta = parse_double(k, v);
    else if (k == "recon_region") recon_region = parse_enum(k, v, objective::parse_region);
    else if (k == "kd_function") kd_function = parse_enum(k, v, objective::parse_kd_function);
    else if (k == "ssim_window") ssim_window = parse_size(k, v);
    else if (k == "in_channels") model.in_channels = parse_size(k, v);
    else if (k == "image_size") model.image_size = parse_size(k, v);
    else if (k == "patch_size") model.patch_size = parse_size(k, v);
    else if (k == "enc_dim") model.enc_dim = parse_size(k, v);
    else if (k == "enc_layers") model.enc_layers = parse_size(k, v);
    else if (k == "enc_heads") model.enc_heads = parse_size(k, v);
    else if (k == "enc_mlp_dim") model.enc_mlp_dim = parse_size(k, v);
    else if (k == "dec_dim") model.dec_dim = parse_size(k, v);
    else if (k == "dec_layers") model.dec_layers = parse_size(k, v);
    else if (k == "dec_heads") model.dec_heads = parse_size(k, v);
    else if (k == "dec_mlp_dim") model.dec_mlp_dim = parse_size(k, v);
    else if (k == "tap_layer") model.tap_layer = parse_size(k, v);
    else if (k == "teacher") teacher = v;
    else if (k == "teacher_timestamps") teacher_timestamps = parse_size(k, v);
    else if (k == "overlap_mode") overlap_mode = parse_overlap(v);
    else if (k == "eval_every") eval_every = parse_size(k, v);
    else if (k == "checkpoint_every") checkpoint_every = parse_size(k, v);
    else if (k == "seed") seed = parse_u64(k, v);
  }
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  c.apply(kv);
  return c;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"student", "base_kd", "hyperkd_wavelet_visible", "hyperkd_wavelet",
                                              "hyperkd_gabor"};
  return names;
}

TrainConfig preset(const std::string& name) {
  TrainConfig c;
  c.preset = name;
  if (name == "student" || name == "base_kd") {
    // Huber reconstruction only; random masking from the first epoch.
    c.recon_loss = objective::ReconKind::kHuber;
    c.weights.lambda2 = 0.0;
    c.salient_mode = saliency::MaskMode::kRandom;
    c.random_switch_epoch = 0;
    if (name == "student") {
      c.weights.beta = 0.0;
    } else {
      c.kd_function = objective::KdFunction::kL1;
    }
  } else if (name == "hyperkd_wavelet_visible") {
    c.mask_method = saliency::Method::kWavelet;
    c.salient_mode = saliency::MaskMode::kSalientVisible;
    c.random_switch_epoch.reset();
  } else if (name == "hyperkd_wavelet") {
    c.mask_method = saliency::Method::kWavelet;
    c.random_switch_epoch = 100;
  } else if (name == "hyperkd_gabor") {
    c.mask_method = saliency::Method::kGabor;
    c.random_switch_epoch = 100;
  } else {
    std::string list;
    for (const auto& n : preset_names()) list += (list.empty() ? "" : ", ") + n;
    config_error("unknown preset '" + name + "' (expected one of " + list + ")");
  }
  return c;
}

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      config_error(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) config_error(origin + ":" + std::to_string(lineno) + ": empty key");
    if (kv.count(key)) config_error(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

std::map<std::string, std::string> read_key_values(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) config_error("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

// ---- schedule and optimizer ---------------------------------------------------

double lr_schedule(std::size_t step, const Schedule& s) {
  if (s.total_steps == 0) throw InvariantError("trainer", "schedule has no steps");
  const std::size_t final_step = s.total_steps - 1;
  if (step < s.warmup_steps) {
    return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  if (step == s.warmup_steps || final_step <= s.warmup_steps) return s.base_lr;
  const double floor = 0.01 * s.base_lr;
  if (step >= final_step) return floor;
  const double progress =
      static_cast<double>(step - s.warmup_steps) / static_cast<double>(final_step - s.warmup_steps);
  return floor + (s.base_lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adam_update(const std::vector<vitmae::NamedParam>& params, const std::vector<std::vector<double>>& grads,
                 AdamState& state, double lr, const AdamConfig& cfg) {
  if (grads.size() != params.size()) {
    throw InvariantError("trainer", "adam: " + std::to_string(grads.size()) + " gradients for " +
                                        std::to_string(params.size()) + " parameters");
  }
  if (state.m.empty() && state.v.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor->size(), 0.0);
      state.v.emplace_back(p.tensor->size(), 0.0);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw InvariantError("trainer", "adam: moment state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i].tensor->size();
    if (grads[i].size() != n || state.m[i].size() != n || state.v[i].size() != n) {
      throw InvariantError("trainer", "adam: shape mismatch for parameter '" + params[i].name + "'");
    }
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double> w = params[i].tensor->to_vector();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
    }
    *params[i].tensor = Tensor::parameter(params[i].tensor->shape(), std::move(w));
  }
}

// ---- run log --------------------------------------------------------------------

void RunLog::set_config(std::map<std::string, std::string> config) {
  if (!steps_.empty()) throw InvariantError("trainer", "run log config is frozen after the first step");
  config_ = std::move(config);
}

void RunLog::add_step(const StepRecord& r) {
  if (!steps_.empty() && r.step <= steps_.back().step) {
    throw InvariantError("trainer", "run log steps must be appended in increasing order");
  }
  steps_.push_back(r);
}

void RunLog::add_epoch(EpochRecord r) {
  if (!epochs_.empty() && r.epoch <= epochs_.back().epoch) {
    throw InvariantError("trainer", "run log epochs must be appended in increasing order");
  }
  epochs_.push_back(std::move(r));
}

std::string RunLog::steps_csv() const {
  std::string out = "step,l_mse,l_ssim,l_kd,l_total,lr\n";
  for (const auto& s : steps_) {
    out += std::to_string(s.step) + ',' + csv_value(s.losses.l_mse) + ',' + csv_value(s.losses.l_ssim) + ',' +
           csv_value(s.losses.l_kd) + ',' + csv_value(s.losses.l_total) + ',' + csv_value(s.lr) + '\n';
  }
  return out;
}

std::string RunLog::epochs_csv() const {
  std::string out = "epoch,mask_mode,psnr,ssim,max_channel_psnr,feature_distance\n";
  for (const auto& e : epochs_) {
    out += std::to_string(e.epoch) + ',' + saliency::mask_mode_name(e.mask_mode);
    if (e.eval) {
      out += ',' + csv_value(e.eval->psnr) + ',' + csv_value(e.eval->ssim) + ',' +
             csv_value(e.eval->max_channel_psnr) + ',' + csv_value(e.eval->feature_distance);
    } else {
      out += ",,,,";
    }
    out += '\n';
  }
  return out;
}

void RunLog::write(const fs::path& dir) const {
  fs::create_directories(dir);
  write_text(dir / "steps.csv", steps_csv());
  write_text(dir / "epochs.csv", epochs_csv());
  std::string cfg;
  for (const auto& [k, v] : config_) cfg += k + '=' + v + '\n';
  write_text(dir / "config.txt", cfg);
  write_text(dir / "summary.txt", "steps=" + std::to_string(steps_.size()) + "\nepochs=" +
                                      std::to_string(epochs_.size()) + "\nwall_seconds=" +
                                      csv_value(wall_seconds_) + '\n');
}

// ---- trainer --------------------------------------------------------------------

vitmae::Teacher make_teacher(const TrainConfig& config) {
  if (config.teacher == "surrogate") {
    vitmae::ModelConfig tc = vitmae::toy_teacher_config(config.model.image_size, config.model.patch_size);
    tc.in_channels = hls_band_table().size() * config.teacher_timestamps;
    return vitmae::Teacher(tc, vitmae::kSurrogateTeacherSeed, config.teacher_timestamps);
  }
  return vitmae::Teacher::load(config.teacher);
}

objective::WeightedLoss sample_objective(const TrainConfig& config, const vitmae::MaskedAutoencoder& student,
                                         const vitmae::Projector& projector, const HyperCube& x,
                                         const Tensor& teacher, const BandStats& stats,
                                         const saliency::PatchMask& mask) {
  const auto& m = config.model;
  const std::size_t C = x.channels, H = x.height, W = x.width;
  if (C != m.in_channels || H != m.image_size || W != m.image_size)
    throw InvariantError("trainer", "sample shape does not match the model");
  if (mask.size() != m.num_patches() || teacher.rank() != 2 || teacher.dim(0) != m.num_patches())
    throw InvariantError("trainer", "mask or teacher features do not match the patch grid");
  const vitmae::TokenSequence all = vitmae::patchify(x, m.patch_size);
  const std::vector<std::size_t> visible = mask.visible_indices();

  Tensor l_kd;
  Tensor pred;
  if (visible.empty()) {
    pred = student.decoder().decode(Tensor::zeros({0, m.enc_dim}), visible);
    l_kd = Tensor::scalar(0.0);
  } else {
    const vitmae::EncoderOutput enc = student.encoder().encode(vitmae::select_positions(all, visible));
    const Tensor projected = projector.forward(constant_rows(teacher, visible));
    l_kd = objective::feature_loss(config.kd_function, projected, enc.tapped, config.weights.temperature);
    pred = student.decoder().decode(enc.latents, visible);
  }
  const Tensor image = vitmae::unpatchify_tensor(pred, C, H, W, m.patch_size);
  const Tensor truth = Tensor::constant({C, H * W}, x.data);

  std::vector<double> select = objective::pixel_selection(mask, H, W, m.patch_size, config.recon_region);
  if (std::all_of(select.begin(), select.end(), [](double s) { return s == 0.0; })) select.clear();

  const Tensor l_rec = config.recon_loss == objective::ReconKind::kMse
                           ? objective::mse_loss(truth, image, select)
                           : objective::huber_loss(truth, image, config.huber_delta, select);
  const Tensor rt = objective::to_reflectance(truth, stats);
  const Tensor rp = objective::to_reflectance(image, stats);
  const Tensor l_ssim =
      config.ssim_window == 0
          ? objective::ssim_loss(rt, rp, {}, select)
          : nx::add_scalar(nx::neg(objective::windowed_ssim_index(rt, rp, H, W, config.ssim_window, {}, select)),
                           1.0);
  return objective::total_loss(l_rec, l_ssim, l_kd, config.weights);
}

Trainer::Trainer(TrainConfig config, const TileStore& store, vitmae::Teacher teacher)
    : config_(std::move(config)), store_(&store), teacher_(std::move(teacher)) {
  config_.validate();
  if (!store.stats) config_error("tile store has no band statistics");
  train_ = store.split(Split::kTrain);
  eval_ = store.split(Split::kEval);
  if (train_.empty()) config_error("tile store has no train tiles");
  const HyperCube& first = *train_.front();
  const auto& m = config_.model;
  if (first.channels != m.in_channels || first.height != m.image_size || first.width != m.image_size) {
    config_error("model expects " + std::to_string(m.in_channels) + " bands of " + std::to_string(m.image_size) +
                 "x" + std::to_string(m.image_size) + ", store has " + std::to_string(first.channels) +
                 " bands of " + std::to_string(first.height) + "x" + std::to_string(first.width));
  }
  const auto& tc = teacher_.config();
  if (tc.image_size != m.image_size || tc.patch_size != m.patch_size) {
    config_error("teacher and student must share image and patch size");
  }
  stats_ = *store.stats;
  alignment_ = build_alignment(first.band_table, hls_band_table(), config_.overlap_mode);
  std::vector<HyperCube> aligned;
  for (const HyperCube* t : train_) aligned.push_back(align_cube(*t, alignment_));
  teacher_stats_ = compute_stats(aligned);

  student_ = vitmae::MaskedAutoencoder(m, Rng::derive(config_.seed, {0x73747564}));
  projector_ = vitmae::Projector(tc.enc_dim, m.enc_dim, config_.seed);
  steps_per_epoch_ = (train_.size() + config_.batch_size - 1) / config_.batch_size;
  log_.set_config(config_.to_map());
}

double Trainer::lr_at(std::size_t step) const {
  return lr_schedule(step, {config_.base_lr, config_.warmup_epochs * steps_per_epoch_, total_steps()});
}

std::vector<vitmae::NamedParam> Trainer::trainable() {
  auto params = student_.parameters();
  auto proj = projector_.parameters();
  params.insert(params.end(), proj.begin(), proj.end());
  return params;
}

const HyperCube& Trainer::normalized(const HyperCube& raw) {
  auto it = normalized_cache_.find(raw.tile_id);
  if (it == normalized_cache_.end()) it = normalized_cache_.emplace(raw.tile_id, normalize(raw, stats_)).first;
  return it->second;
}

const Tensor& Trainer::teacher_features(const HyperCube& raw) {
  auto it = teacher_cache_.find(raw.tile_id);
  if (it == teacher_cache_.end()) {
    const HyperCube input = normalize(align_cube(raw, alignment_), teacher_stats_);
    const Tensor f = teacher_.forward(input);
    it = teacher_cache_.emplace(raw.tile_id, Tensor::constant(f.shape(), f.to_vector())).first;
  }
  return it->second;
}

const saliency::ScoreVector& Trainer::scores(const HyperCube& raw) {
  auto it = score_cache_.find(raw.tile_id);
  if (it == score_cache_.end()) {
    it = score_cache_.emplace(raw.tile_id, saliency::score_patches(raw, config_.mask_method, config_.model.patch_size))
             .first;
  }
  return it->second;
}

Trainer::SampleTerms Trainer::sample_loss(const HyperCube& raw, const saliency::PatchMask& mask) {
  objective::WeightedLoss w =
      sample_objective(config_, student_, projector_, normalized(raw), teacher_features(raw), stats_, mask);
  return {w.total, w.breakdown};
}

LossBreakdown Trainer::step() {
  if (done()) throw InvariantError("trainer", "training already finished");
  const std::size_t ep = epoch();
  const std::size_t within = global_step_ % steps_per_epoch_;
  const auto perm = Rng(Rng::derive(config_.seed, {1, ep})).permutation(train_.size());
  const std::size_t begin = within * config_.batch_size;
  const std::size_t end = std::min(begin + config_.batch_size, train_.size());
  const std::size_t batch = end - begin;
  const std::size_t micro = config_.micro_batch == 0 ? batch : config_.micro_batch;
  const saliency::MaskMode mode = saliency::mask_schedule(ep, config_.curriculum());
  const std::size_t n = config_.model.num_patches();

  LossBreakdown mean;
  Tensor pending;
  std::size_t in_graph = 0;
  for (std::size_t k = 0; k < batch; ++k) {
    const HyperCube& raw = *train_[perm[begin + k]];
    const std::uint64_t mask_seed = Rng::derive(config_.seed, {2, global_step_, k});
    const saliency::PatchMask mask = mode == saliency::MaskMode::kRandom
                                         ? saliency::random_mask(n, config_.mask_ratio, mask_seed)
                                         : saliency::build_mask(scores(raw), config_.mask_ratio, mode, mask_seed);
    const SampleTerms terms = sample_loss(raw, mask);
    mean.l_mse += terms.breakdown.l_mse;
    mean.l_ssim += terms.breakdown.l_ssim;
    mean.l_kd += terms.breakdown.l_kd;
    const Tensor scaled = nx::scale(terms.total, 1.0 / static_cast<double>(batch));
    pending = in_graph == 0 ? scaled : nx::add(pending, scaled);
    if (++in_graph == micro || k + 1 == batch) {
      if (pending.requires_grad()) nx::backward(pending);
      in_graph = 0;
    }
  }
  const double inv = 1.0 / static_cast<double>(batch);
  mean.l_mse *= inv;
  mean.l_ssim *= inv;
  mean.l_kd *= inv;
  combine(mean, config_.weights);

  const auto params = trainable();
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    std::vector<double> g = p.tensor->grad();
    if (g.empty()) g.assign(p.tensor->size(), 0.0);
    grads.push_back(std::move(g));
  }
  const double lr = lr_at(global_step_);
  adam_update(params, grads, adam_, lr);
  log_.add_step({global_step_, ep, mode, mean, lr});
  ++global_step_;
  return mean;
}

void Trainer::end_of_epoch(std::size_t ep, const fs::path& checkpoint_dir) {
  EpochRecord rec{ep, saliency::mask_schedule(ep, config_.curriculum()), std::nullopt};
  const bool last = ep + 1 == config_.epochs;
  const bool eval_now = last || (config_.eval_every > 0 && (ep + 1) % config_.eval_every == 0);
  if (eval_now && !eval_.empty()) rec.eval = evaluate(eval_);
  log_.add_epoch(std::move(rec));
  if (!checkpoint_dir.empty() && config_.checkpoint_every > 0 && (ep + 1) % config_.checkpoint_every == 0) {
    fs::create_directories(checkpoint_dir);
    save_checkpoint(checkpoint(), checkpoint_dir / ("epoch_" + std::to_string(ep + 1) + ".ckpt"));
  }
}

void Trainer::run(std::size_t steps, const fs::path& checkpoint_dir) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t remaining = total_steps() - global_step_;
  const std::size_t todo = steps == 0 ? remaining : std::min(steps, remaining);
  for (std::size_t i = 0; i < todo; ++i) {
    step();
    if (global_step_ % steps_per_epoch_ == 0) end_of_epoch(global_step_ / steps_per_epoch_ - 1, checkpoint_dir);
  }
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
  log_.set_wall_seconds(log_.wall_seconds() + dt.count());
}

EvalResult Trainer::evaluate(const std::vector<const HyperCube*>& tiles) {
  if (tiles.empty()) config_error("evaluation needs at least one tile");
  const auto& m = config_.model;
  EvalResult out;
  for (std::size_t idx = 0; idx < tiles.size(); ++idx) {
    const HyperCube& raw = *tiles[idx];
    const HyperCube& x = normalized(raw);
    const std::size_t C = x.channels, H = x.height, W = x.width;
    const saliency::PatchMask mask =
        saliency::random_mask(m.num_patches(), config_.mask_ratio, Rng::derive(config_.seed, {3, idx}));
    const std::vector<std::size_t> visible = mask.visible_indices();
    Tensor pred;
    if (visible.empty()) {
      pred = student_.decoder().decode(Tensor::zeros({0, m.enc_dim}), visible);
    } else {
      const vitmae::TokenSequence seq = vitmae::select_positions(vitmae::patchify(x, m.patch_size), visible);
      pred = student_.decoder().decode(student_.encoder().encode(seq).latents, visible);
    }
    const Tensor image = objective::to_reflectance(vitmae::unpatchify_tensor(pred, C, H, W, m.patch_size), stats_);
    std::vector<double> select = objective::pixel_selection(mask, H, W, m.patch_size, objective::Region::kMaskedOnly);
    if (std::all_of(select.begin(), select.end(), [](double s) { return s == 0.0; })) select.clear();
    out.tiles.add(objective::tile_metrics(raw.tile_id, objective::clamp01(raw.data),
                                          objective::clamp01(image.data()), C, select));
  }
  out.psnr = out.tiles.mean_psnr();
  out.ssim = out.tiles.mean_ssim();
  out.max_channel_psnr = out.tiles.max_channel_psnr();
  out.feature_distance = feature_distance(tiles);
  return out;
}

double Trainer::feature_distance(const std::vector<const HyperCube*>& tiles) {
  if (tiles.empty()) config_error("feature distance needs at least one tile");
  const auto& m = config_.model;
  double total = 0.0;
  std::size_t count = 0;
  for (const HyperCube* t : tiles) {
    const HyperCube& x = normalized(*t);
    const Tensor student = student_.encoder().encode(vitmae::patchify(x, m.patch_size), true).tapped;
    const Tensor proj = projector_.forward(teacher_features(*t));
    const auto s = student.data();
    const auto p = proj.data();
    const std::size_t d = student.dim(1);
    for (std::size_t r = 0; r < student.dim(0); ++r) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = s[r * d + j] - p[r * d + j];
        sq += diff * diff;
      }
      total += std::sqrt(sq);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

Checkpoint Trainer::checkpoint() {
  Checkpoint ckpt;
  ckpt.config = config_.to_map();
  ckpt.state["global_step"] = std::to_string(global_step_);
  ckpt.state["adam_t"] = std::to_string(adam_.t);
  const auto params = trainable();
  vitmae::export_parameters(params, ckpt);
  if (!adam_.m.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      ckpt.arrays.push_back({"adam.m." + params[i].name, params[i].tensor->shape(), adam_.m[i]});
      ckpt.arrays.push_back({"adam.v." + params[i].name, params[i].tensor->shape(), adam_.v[i]});
    }
  }
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  const TrainConfig saved = TrainConfig::from_map(ckpt.config);
  if (!(saved.model == config_.model)) config_error("checkpoint model config does not match the trainer");
  auto state = [&](const char* key) {
    auto it = ckpt.state.find(key);
    if (it == ckpt.state.end()) config_error(std::string("checkpoint is missing state '") + key + "'");
    return parse_size(key, it->second);
  };
  const std::size_t step = state("global_step");
  const std::size_t t = state("adam_t");
  if (step > total_steps()) config_error("checkpoint step lies beyond the configured schedule");
  const auto params = trainable();
  vitmae::import_parameters(params, ckpt);
  AdamState adam;
  adam.t = t;
  if (t > 0) {
    for (const auto& p : params) {
      const NamedArray& mm = ckpt.array("adam.m." + p.name);
      const NamedArray& vv = ckpt.array("adam.v." + p.name);
      if (mm.values.size() != p.tensor->size() || vv.values.size() != p.tensor->size()) {
        config_error("checkpoint optimizer state for '" + p.name + "' has the wrong size");
      }
      adam.m.push_back(mm.values);
      adam.v.push_back(vv.values);
    }
  }
  adam_ = std::move(adam);
  global_step_ = step;
}

PretrainResult run_pretraining(const TrainConfig& config, const TileStore& store, const fs::path& out_dir) {
  Trainer trainer(config, store, make_teacher(config));
  const std::uint64_t teacher_hash = trainer.teacher().parameter_hash();
  trainer.run(0, out_dir.empty() ? fs::path() : out_dir / "checkpoints");
  if (trainer.teacher().parameter_hash() != teacher_hash) {
    throw InvariantError("trainer", "teacher parameters changed during training");
  }
  PretrainResult result{trainer.checkpoint(), trainer.log()};
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    save_checkpoint(result.checkpoint, out_dir / "final.ckpt");
    result.log.write(out_dir);
  }
  return result;
}

}  // namespace hyperkd::trainer
