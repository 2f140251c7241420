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
#include <span>
#include <string>
#include <vector>

#include "hyperkd/checkpoint.hpp"
#include "hyperkd/hypercube.hpp"
#include "hyperkd/numerics/tensor.hpp"
#include "hyperkd/vitmae.hpp"

namespace hyperkd::downstream {

using numerics::Tensor;

enum class Task { kClassification, kRegression };

const char* task_name(Task t);
Task parse_task(const std::string& s);

struct HeadConfig {
  Task task = Task::kClassification;
  std::size_t num_classes = 4;
  std::vector<std::size_t> widths{32, 32};  // 3x3 conv layers before the 1x1 projection
  std::size_t upsample = 0;                 // 0 = encoder patch size

  /// Throws DataError on fewer than two classes or an empty layer list.
  void validate() const;
  std::size_t outputs() const { return task == Task::kClassification ? num_classes : 1; }
};

/// Frozen encoder plus a trainable convolutional head.
class DownstreamModel {
 public:
  DownstreamModel(vitmae::Encoder encoder, HeadConfig head, std::uint64_t seed);

  /// Unmasked final-layer encoder features as [enc_dim, H/p, W/p].
  Tensor features(const HyperCube& normalized) const;
  /// Head output [outputs, H, W] from a feature map.
  Tensor head(const Tensor& features) const;
  Tensor forward(const HyperCube& normalized) const { return head(features(normalized)); }
  /// Per-pixel argmax of the class logits; ties go to the lowest class.
  std::vector<int> predict_classes(const HyperCube& normalized) const;
  std::vector<double> predict_values(const HyperCube& normalized) const;

  const HeadConfig& config() const { return config_; }
  const vitmae::Encoder& encoder() const { return encoder_; }
  std::vector<vitmae::NamedParam> head_parameters();
  std::uint64_t encoder_hash() const;

 private:
  struct Conv {
    Tensor weight;  // [out, in, k, k]
    Tensor bias;    // [out]
  };
  vitmae::Encoder encoder_;
  HeadConfig config_;
  std::vector<Conv> layers_;
  std::size_t upsample_ = 1;
};

/// Builds the frozen encoder from a pretraining checkpoint.
DownstreamModel attach_head(const Checkpoint& ckpt, const HeadConfig& head, std::uint64_t seed);

struct HeadTrainConfig {
  std::size_t steps = 100;
  std::size_t batch_size = 4;
  double lr = 1e-2;
  std::uint64_t seed = 0;
};

/// Per-pixel targets for one tile: class ids or normalized values.
struct HeadSample {
  const HyperCube* tile = nullptr;  // normalized
  std::vector<int> labels;
  std::vector<double> targets;
};

/// Adam on the head only. Cross-entropy for classification, MSE for
/// regression. Returns the loss of every step.
std::vector<double> train_head(DownstreamModel& model, const std::vector<HeadSample>& samples,
                               const HeadTrainConfig& config);

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  /// Throws DataError for ids outside [0, num_classes).
  void add(int truth, int predicted);
  void add(std::span<const int> truth, std::span<const int> predicted);

  std::size_t num_classes() const { return n_; }
  std::uint64_t count(std::size_t truth, std::size_t predicted) const { return counts_[truth * n_ + predicted]; }
  std::uint64_t total() const;
  std::uint64_t support(std::size_t c) const;
  double top1() const;
  /// Pixelwise recall of class c; NaN when c is absent from the labels.
  double class_top1(std::size_t c) const;
  double iou(std::size_t c) const;
  /// Mean IoU over classes present in the labels.
  double miou() const;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

struct ClassificationResult {
  ConfusionMatrix confusion{2};
  double top1 = 0.0;
  double miou = 0.0;
  std::vector<double> class_top1;
  std::vector<double> class_iou;
};

ClassificationResult summarize(const ConfusionMatrix& cm);
ClassificationResult eval_classification(const DownstreamModel& model, const std::vector<HeadSample>& samples);
/// Mean absolute error between prediction and target.
double mean_absolute_error(std::span<const double> predicted, std::span<const double> target);
double eval_regression(const DownstreamModel& model, const std::vector<HeadSample>& samples);

/// `class,top1,iou` per present class, then `all,<top1>,<miou>`.
void write_classification_csv(const ClassificationResult& r, const std::filesystem::path& path);
/// `mae` header and one record.
void write_regression_csv(double mae, const std::filesystem::path& path);

struct TargetStats {
  double mean = 0.0;
  double std = 1.0;
};
/// Mean and (floored) std over the given target maps.
TargetStats compute_target_stats(const std::vector<const std::vector<double>*>& targets);
std::vector<double> normalize_targets(std::span<const double> values, const TargetStats& s);

}  // namespace hyperkd::downstream
