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
#include <span>
#include <string>
#include <vector>

#include "hyperkd/hypercube.hpp"
#include "hyperkd/numerics/tensor.hpp"
#include "hyperkd/saliency.hpp"

namespace hyperkd::objective {

using numerics::Tensor;

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 0.5;
  double alpha = 1.0;
  double beta = 0.5;
  double temperature = 1.0;

  /// Throws DataError on negative weights or a non-positive temperature.
  void validate() const;
};

struct SsimConstants {
  double dynamic_range = 1.0;

  double c1() const { return (0.01 * dynamic_range) * (0.01 * dynamic_range); }
  double c2() const { return (0.03 * dynamic_range) * (0.03 * dynamic_range); }
};

struct LossBreakdown {
  double l_mse = 0.0;
  double l_ssim = 0.0;
  double l_recon = 0.0;
  double l_kd = 0.0;
  double l_total = 0.0;
};

enum class Region { kMaskedOnly, kAll };
enum class ReconKind { kMse, kHuber };
enum class KdFunction { kKld, kL1, kJs };

const char* region_name(Region r);
Region parse_region(const std::string& s);
const char* recon_kind_name(ReconKind k);
ReconKind parse_recon_kind(const std::string& s);
const char* kd_function_name(KdFunction f);
KdFunction parse_kd_function(const std::string& s);

/// Per-pixel weights (1 selected, 0 not) over an H x W grid for the pixels
/// of masked patches, or all ones for Region::kAll.
std::vector<double> pixel_selection(const saliency::PatchMask& mask, std::size_t height, std::size_t width,
                                    std::size_t patch_size, Region region);

// Reconstruction inputs are [C, H*W]; `select` holds H*W pixel weights or is
// empty for all pixels. An all-zero selection is an InvariantError.

Tensor mse_loss(const Tensor& truth, const Tensor& pred, std::span<const double> select = {});
Tensor huber_loss(const Tensor& truth, const Tensor& pred, double delta = 1.0,
                  std::span<const double> select = {});

/// Global-statistics SSIM of each channel, [C].
Tensor ssim_per_channel(const Tensor& truth, const Tensor& pred, const SsimConstants& k = {},
                        std::span<const double> select = {});
/// Channel-averaged global SSIM.
Tensor ssim_index(const Tensor& truth, const Tensor& pred, const SsimConstants& k = {},
                  std::span<const double> select = {});
Tensor ssim_loss(const Tensor& truth, const Tensor& pred, const SsimConstants& k = {},
                 std::span<const double> select = {});

/// Sliding-window SSIM: box window of odd side `window` with reflect
/// padding, map averaged over selected pixels and channels.
Tensor windowed_ssim_index(const Tensor& truth, const Tensor& pred, std::size_t height, std::size_t width,
                           std::size_t window, const SsimConstants& k = {},
                           std::span<const double> select = {});

// Feature distillation on [n, d] token features; teacher already projected.

/// KL(teacher || student) of the per-token softmax at temperature T, times
/// T^2, averaged over tokens.
Tensor feature_kld(const Tensor& teacher, const Tensor& student, double temperature = 1.0);
Tensor feature_l1(const Tensor& teacher, const Tensor& student);
/// Jensen-Shannon divergence of the per-token softmax at temperature T,
/// averaged over tokens. Bounded by ln 2.
Tensor feature_js(const Tensor& teacher, const Tensor& student, double temperature = 1.0);
Tensor feature_loss(KdFunction f, const Tensor& teacher, const Tensor& student, double temperature);

struct WeightedLoss {
  Tensor total;
  LossBreakdown breakdown;
};

/// alpha * (lambda1 * mse + lambda2 * ssim) + beta * kd. An empty tensor
/// stands for a term that was not computed (value 0). Terms with zero
/// weight are logged but left out of the graph.
WeightedLoss total_loss(const Tensor& l_mse, const Tensor& l_ssim, const Tensor& l_kd, const LossWeights& w);

// ---- metrics -------------------------------------------------------------------

inline constexpr double kPsnrCeiling = 99.0;

/// Normalized [C, H*W] values mapped back through per-band stats.
Tensor to_reflectance(const Tensor& normalized, const BandStats& stats);
std::vector<double> clamp01(std::span<const double> values);

/// 10 log10(max^2 / MSE), capped at 99 dB (also for identical inputs).
double psnr(std::span<const double> truth, std::span<const double> pred, double max_value = 1.0);
std::vector<double> per_channel_psnr(std::span<const double> truth, std::span<const double> pred,
                                     std::size_t channels, double max_value = 1.0,
                                     std::span<const double> select = {});
std::vector<double> per_channel_ssim(std::span<const double> truth, std::span<const double> pred,
                                     std::size_t channels, const SsimConstants& k = {},
                                     std::span<const double> select = {});

struct TileMetrics {
  std::string tile_id;
  double psnr = 0.0;
  double ssim = 0.0;
  std::vector<double> channel_psnr;
  std::vector<double> channel_ssim;
};

/// Reconstruction metrics of one tile from reflectance values in [0, 1]
/// (already clamped), computed over the selected pixels.
TileMetrics tile_metrics(const std::string& tile_id, std::span<const double> truth01,
                         std::span<const double> pred01, std::size_t channels,
                         std::span<const double> select = {});

/// Running means over an evaluation set.
class MetricsAccumulator {
 public:
  void add(const TileMetrics& m);

  std::size_t count() const { return tiles_.size(); }
  const std::vector<TileMetrics>& tiles() const { return tiles_; }
  double mean_psnr() const;
  double mean_ssim() const;
  std::vector<double> channel_psnr_mean() const;
  std::vector<double> channel_ssim_mean() const;
  /// Maximum over channels of the per-channel mean PSNR.
  double max_channel_psnr() const;

  void write_tiles_csv(const std::filesystem::path& path) const;
  void write_channels_csv(const std::filesystem::path& path) const;

 private:
  std::vector<TileMetrics> tiles_;
};

}  // namespace hyperkd::objective
