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
#include <optional>
#include <string>
#include <vector>

#include "hyperkd/banddef.hpp"
#include "hyperkd/checkpoint.hpp"
#include "hyperkd/datastore.hpp"
#include "hyperkd/objective.hpp"
#include "hyperkd/saliency.hpp"
#include "hyperkd/vitmae.hpp"

namespace hyperkd::trainer {

using numerics::Tensor;
using objective::LossBreakdown;

struct TrainConfig {
  std::string preset = "custom";
  std::size_t epochs = 200;
  std::size_t batch_size = 8;
  std::size_t micro_batch = 0;  // samples per backward graph; 0 = whole batch
  double base_lr = 1e-4;
  std::size_t warmup_epochs = 10;
  double mask_ratio = 0.75;
  saliency::Method mask_method = saliency::Method::kGabor;
  saliency::MaskMode salient_mode = saliency::MaskMode::kSalientMasked;
  std::optional<std::size_t> random_switch_epoch = 100;
  objective::LossWeights weights;
  objective::ReconKind recon_loss = objective::ReconKind::kMse;
  double huber_delta = 1.0;
  objective::Region recon_region = objective::Region::kMaskedOnly;
  objective::KdFunction kd_function = objective::KdFunction::kKld;
  std::size_t ssim_window = 0;  // 0 = global statistics
  vitmae::ModelConfig model;    // student; tap_layer lives here
  std::string teacher = "surrogate";  // or a teacher checkpoint path
  std::size_t teacher_timestamps = 3;
  OverlapMode overlap_mode = OverlapMode::kContained;
  std::size_t eval_every = 1;       // epochs; 0 = final epoch only
  std::size_t checkpoint_every = 0; // epochs; 0 = final checkpoint only
  std::uint64_t seed = 0;

  /// Throws DataError naming the offending field.
  void validate() const;
  std::map<std::string, std::string> to_map() const;
  /// Applies key=value pairs; unknown keys and malformed values throw DataError.
  void apply(const std::map<std::string, std::string>& kv);
  static TrainConfig from_map(const std::map<std::string, std::string>& kv);
  saliency::MaskCurriculum curriculum() const {
    return {salient_mode, random_switch_epoch};
  }
};

/// Keys accepted by TrainConfig::apply, in documentation order.
const std::vector<std::string>& config_keys();

/// Named experiment presets: student, base_kd, hyperkd_wavelet_visible,
/// hyperkd_wavelet, hyperkd_gabor.
TrainConfig preset(const std::string& name);
const std::vector<std::string>& preset_names();

/// Parses UTF-8 key=value text. Blank lines and '#' comments are skipped.
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin);
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

// ---- schedule and optimizer ---------------------------------------------------

struct Schedule {
  double base_lr = 1e-4;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;
};

/// Linear warmup from 0, then cosine decay reaching 0.01 * base_lr at the
/// final step (total_steps - 1).
double lr_schedule(std::size_t step, const Schedule& s);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;
};

/// One bias-corrected Adam update. Parameters are replaced with fresh leaf
/// tensors; empty moment state is zero-initialised to match the params.
void adam_update(const std::vector<vitmae::NamedParam>& params,
                 const std::vector<std::vector<double>>& grads, AdamState& state, double lr,
                 const AdamConfig& config = {});

// ---- run log --------------------------------------------------------------------

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  saliency::MaskMode mask_mode = saliency::MaskMode::kRandom;
  LossBreakdown losses;
  double lr = 0.0;
};

struct EvalResult {
  double psnr = 0.0;
  double ssim = 0.0;
  double max_channel_psnr = 0.0;
  double feature_distance = 0.0;
  objective::MetricsAccumulator tiles;
};

struct EpochRecord {
  std::size_t epoch = 0;
  saliency::MaskMode mask_mode = saliency::MaskMode::kRandom;
  std::optional<EvalResult> eval;
};

class RunLog {
 public:
  /// Fixes the configuration snapshot; throws InvariantError once a step
  /// has been recorded.
  void set_config(std::map<std::string, std::string> config);
  void add_step(const StepRecord& r);
  void add_epoch(EpochRecord r);
  void set_wall_seconds(double s) { wall_seconds_ = s; }

  const std::map<std::string, std::string>& config() const { return config_; }
  const std::vector<StepRecord>& steps() const { return steps_; }
  const std::vector<EpochRecord>& epochs() const { return epochs_; }
  double wall_seconds() const { return wall_seconds_; }

  /// `step,l_mse,l_ssim,l_kd,l_total,lr` with round-trip precision.
  std::string steps_csv() const;
  /// `epoch,mask_mode,psnr,ssim,max_channel_psnr,feature_distance`.
  std::string epochs_csv() const;
  /// Writes steps.csv, epochs.csv, config.txt and summary.txt into dir.
  void write(const std::filesystem::path& dir) const;

 private:
  std::map<std::string, std::string> config_;
  std::vector<StepRecord> steps_;
  std::vector<EpochRecord> epochs_;
  double wall_seconds_ = 0.0;
};

// ---- trainer --------------------------------------------------------------------

/// Teacher described by the config: the seeded surrogate or a checkpoint.
vitmae::Teacher make_teacher(const TrainConfig& config);

/// Per-sample training objective: masked reconstruction (MSE or Huber),
/// SSIM on reflectance and feature distillation at the tap layer, weighted
/// as configured. `normalized` is the z-scored student input, `teacher` the
/// frozen teacher features for every patch [N, D_t] and `stats` maps the
/// normalized cube back to reflectance.
objective::WeightedLoss sample_objective(const TrainConfig& config, const vitmae::MaskedAutoencoder& student,
                                         const vitmae::Projector& projector, const HyperCube& normalized,
                                         const Tensor& teacher, const BandStats& stats,
                                         const saliency::PatchMask& mask);

class Trainer {
 public:
  /// The store must carry train-split stats; model input dims must match it.
  Trainer(TrainConfig config, const TileStore& store, vitmae::Teacher teacher);

  const TrainConfig& config() const { return config_; }
  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  std::size_t total_steps() const { return steps_per_epoch_ * config_.epochs; }
  std::size_t global_step() const { return global_step_; }
  std::size_t epoch() const { return global_step_ / steps_per_epoch_; }
  bool done() const { return global_step_ >= total_steps(); }
  double lr_at(std::size_t step) const;

  /// One optimizer update on the next batch; records the step in the log.
  LossBreakdown step();
  /// Runs up to `steps` further updates (all remaining when 0), evaluating
  /// and checkpointing at epoch boundaries as configured.
  void run(std::size_t steps = 0, const std::filesystem::path& checkpoint_dir = {});

  /// Reconstruction metrics on masked pixels of the given tiles under a
  /// fixed-seed random mask, plus the mean post-projection feature distance.
  EvalResult evaluate(const std::vector<const HyperCube*>& tiles);
  /// Mean per-token L2 distance between projected teacher features and
  /// unmasked student tap features.
  double feature_distance(const std::vector<const HyperCube*>& tiles);

  Checkpoint checkpoint();
  void restore(const Checkpoint& ckpt);

  vitmae::MaskedAutoencoder& student() { return student_; }
  vitmae::Projector& projector() { return projector_; }
  const vitmae::Teacher& teacher() const { return teacher_; }
  const RunLog& log() const { return log_; }
  RunLog& log() { return log_; }

 private:
  struct SampleTerms {
    Tensor total;
    LossBreakdown breakdown;
  };
  SampleTerms sample_loss(const HyperCube& raw, const saliency::PatchMask& mask);
  const HyperCube& normalized(const HyperCube& raw);
  const Tensor& teacher_features(const HyperCube& raw);
  const saliency::ScoreVector& scores(const HyperCube& raw);
  std::vector<vitmae::NamedParam> trainable();
  void end_of_epoch(std::size_t epoch, const std::filesystem::path& checkpoint_dir);

  TrainConfig config_;
  const TileStore* store_;
  std::vector<const HyperCube*> train_;
  std::vector<const HyperCube*> eval_;
  BandStats stats_;
  BandStats teacher_stats_;
  AlignmentMap alignment_;
  vitmae::Teacher teacher_;
  vitmae::MaskedAutoencoder student_;
  vitmae::Projector projector_;
  AdamState adam_;
  std::size_t steps_per_epoch_ = 1;
  std::size_t global_step_ = 0;
  RunLog log_;
  std::map<std::string, HyperCube> normalized_cache_;
  std::map<std::string, Tensor> teacher_cache_;
  std::map<std::string, saliency::ScoreVector> score_cache_;
};

struct PretrainResult {
  Checkpoint checkpoint;
  RunLog log;
};

/// Trains to completion, writing intermediate checkpoints (when configured),
/// final.ckpt and the run log into out_dir when it is non-empty.
PretrainResult run_pretraining(const TrainConfig& config, const TileStore& store,
                               const std::filesystem::path& out_dir = {});

}  // namespace hyperkd::trainer
