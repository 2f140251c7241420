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


#include "hyperkd/downstream.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "hyperkd/error.hpp"
#include "hyperkd/rng.hpp"
#include "hyperkd/trainer.hpp"

namespace hyperkd::downstream {
namespace {

namespace nx = hyperkd::numerics;

[[noreturn]] void data_error(const std::string& msg) { throw DataError("downstream", msg); }

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

const char* task_name(Task t) { return t == Task::kClassification ? "classification" : "regression"; }

Task parse_task(const std::string& s) {
  if (s == "classification") return Task::kClassification;
  if (s == "regression") return Task::kRegression;
  data_error("unknown task '" + s + "' (expected classification or regression)");
}

void HeadConfig::validate() const {
  if (task == Task::kClassification && num_classes < 2) data_error("classification needs at least two classes");
  if (widths.empty()) data_error("head needs at least one 3x3 layer");
  for (std::size_t w : widths)
    if (w == 0) data_error("head layer widths must be positive");
}

// ---- model -----------------------------------------------------------------------

DownstreamModel::DownstreamModel(vitmae::Encoder encoder, HeadConfig head, std::uint64_t seed)
    : encoder_(std::move(encoder)), config_(std::move(head)) {
  config_.validate();
  vitmae::set_trainable(encoder_.parameters(), false);
  upsample_ = config_.upsample == 0 ? encoder_.config().patch_size : config_.upsample;
  Rng rng(Rng::derive(seed, {0x68656164}));
  std::size_t in = encoder_.config().enc_dim;
  auto make = [&](std::size_t out, std::size_t k) {
    const double std = std::sqrt(2.0 / static_cast<double>(in * k * k));
    std::vector<double> w(out * in * k * k);
    for (double& v : w) v = rng.truncated_normal(std);
    layers_.push_back({Tensor::parameter({out, in, k, k}, std::move(w)), Tensor::parameter({out}, std::vector<double>(out, 0.0))});
    in = out;
  };
  for (std::size_t w : config_.widths) make(w, 3);
  make(config_.outputs(), 1);
}

Tensor DownstreamModel::features(const HyperCube& x) const {
  const auto& c = encoder_.config();
  if (x.channels != c.in_channels || x.height != c.image_size || x.width != c.image_size) {
    data_error("encoder expects " + std::to_string(c.in_channels) + " bands of " + std::to_string(c.image_size) +
               "x" + std::to_string(c.image_size) + ", tile '" + x.tile_id + "' has " + std::to_string(x.channels) +
               " bands of " + std::to_string(x.height) + "x" + std::to_string(x.width));
  }
  const Tensor latents = encoder_.encode(vitmae::patchify(x, c.patch_size)).latents;
  const std::size_t n = latents.dim(0), d = latents.dim(1), g = c.grid_side();
  const auto v = latents.data();
  std::vector<double> out(d * n);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < d; ++j) out[j * n + t] = v[t * d + j];
  return Tensor::constant({d, g, g}, std::move(out));
}

Tensor DownstreamModel::head(const Tensor& features) const {
  Tensor x = features;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = nx::conv2d_multi(x, layers_[i].weight, layers_[i].bias);
    if (i + 1 < layers_.size()) x = nx::relu(x);
  }
  return upsample_ == 1 ? x : nx::upsample_nearest(x, upsample_);
}

std::vector<int> DownstreamModel::predict_classes(const HyperCube& x) const {
  if (config_.task != Task::kClassification) data_error("predict_classes needs a classification head");
  const Tensor logits = forward(x);
  const std::size_t k = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  const auto v = logits.data();
  std::vector<int> out(hw, 0);
  for (std::size_t i = 0; i < hw; ++i) {
    double best = v[i];
    for (std::size_t c = 1; c < k; ++c) {
      if (v[c * hw + i] > best) {
        best = v[c * hw + i];
        out[i] = static_cast<int>(c);
      }
    }
  }
  return out;
}

std::vector<double> DownstreamModel::predict_values(const HyperCube& x) const {
  if (config_.task != Task::kRegression) data_error("predict_values needs a regression head");
  return forward(x).to_vector();
}

std::vector<vitmae::NamedParam> DownstreamModel::head_parameters() {
  std::vector<vitmae::NamedParam> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    out.push_back({"head." + std::to_string(i) + ".weight", &layers_[i].weight});
    out.push_back({"head." + std::to_string(i) + ".bias", &layers_[i].bias});
  }
  return out;
}

std::uint64_t DownstreamModel::encoder_hash() const {
  return vitmae::hash_parameters(const_cast<vitmae::Encoder&>(encoder_).parameters());
}

DownstreamModel attach_head(const Checkpoint& ckpt, const HeadConfig& head, std::uint64_t seed) {
  const vitmae::ModelConfig cfg = vitmae::ModelConfig::from_map(ckpt.config);
  vitmae::Encoder encoder(cfg, 0);
  vitmae::import_parameters(encoder.parameters(), ckpt);
  return DownstreamModel(std::move(encoder), head, seed);
}

// ---- training ----------------------------------------------------------------------

std::vector<double> train_head(DownstreamModel& model, const std::vector<HeadSample>& samples,
                               const HeadTrainConfig& config) {
  if (samples.empty()) data_error("head training needs at least one sample");
  if (config.batch_size == 0) data_error("head batch_size must be at least 1");
  const HeadConfig& hc = model.config();
  std::vector<Tensor> feats;
  for (const auto& s : samples) {
    const std::size_t hw = s.tile->height * s.tile->width;
    if (hc.task == Task::kClassification) {
      if (s.labels.size() != hw) data_error("label map of tile '" + s.tile->tile_id + "' has the wrong size");
      for (int l : s.labels)
        if (l < 0 || static_cast<std::size_t>(l) >= hc.num_classes)
          data_error("label " + std::to_string(l) + " outside [0, " + std::to_string(hc.num_classes) + ")");
    } else if (s.targets.size() != hw) {
      data_error("target map of tile '" + s.tile->tile_id + "' has the wrong size");
    }
    feats.push_back(model.features(*s.tile));
  }

  auto sample_loss = [&](std::size_t i) {
    const HeadSample& s = samples[i];
    const Tensor out = model.head(feats[i]);
    const std::size_t hw = out.dim(1) * out.dim(2);
    if (hc.task == Task::kClassification) {
      const Tensor logp = nx::log_softmax(nx::reshape(out, {hc.num_classes, hw}), 0);
      std::vector<double> w(hc.num_classes * hw, 0.0);
      for (std::size_t p = 0; p < hw; ++p) w[static_cast<std::size_t>(s.labels[p]) * hw + p] = -1.0 / static_cast<double>(hw);
      return nx::weighted_sum(logp, w);
    }
    const Tensor target = Tensor::constant({1, out.dim(1), out.dim(2)}, s.targets);
    return nx::mean(nx::square(nx::sub(out, target)));
  };

  const std::size_t n = samples.size();
  const std::size_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
  trainer::AdamState adam;
  std::vector<double> losses;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const std::size_t epoch = step / per_epoch, within = step % per_epoch;
    const auto perm = Rng(Rng::derive(config.seed, {1, epoch})).permutation(n);
    const std::size_t begin = within * config.batch_size;
    const std::size_t end = std::min(begin + config.batch_size, n);
    Tensor total;
    for (std::size_t k = begin; k < end; ++k) {
      const Tensor l = nx::scale(sample_loss(perm[k]), 1.0 / static_cast<double>(end - begin));
      total = k == begin ? l : nx::add(total, l);
    }
    nx::backward(total);
    const auto params = model.head_parameters();
    std::vector<std::vector<double>> grads;
    for (const auto& p : params) grads.push_back(p.tensor->grad());
    trainer::adam_update(params, grads, adam, config.lr);
    losses.push_back(total.item());
  }
  return losses;
}

// ---- evaluation --------------------------------------------------------------------

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : n_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes < 2) data_error("confusion matrix needs at least two classes");
}

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth < 0 || static_cast<std::size_t>(truth) >= n_ || predicted < 0 || static_cast<std::size_t>(predicted) >= n_) {
    data_error("class id pair (" + std::to_string(truth) + ", " + std::to_string(predicted) + ") outside [0, " +
               std::to_string(n_) + ")");
  }
  ++counts_[static_cast<std::size_t>(truth) * n_ + static_cast<std::size_t>(predicted)];
}

void ConfusionMatrix::add(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) data_error("label and prediction maps differ in size");
  for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], predicted[i]);
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::support(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < n_; ++p) s += count(c, p);
  return s;
}

double ConfusionMatrix::top1() const {
  const std::uint64_t t = total();
  if (t == 0) return kNaN;
  std::uint64_t correct = 0;
  for (std::size_t c = 0; c < n_; ++c) correct += count(c, c);
  return static_cast<double>(correct) / static_cast<double>(t);
}

double ConfusionMatrix::class_top1(std::size_t c) const {
  const std::uint64_t s = support(c);
  return s == 0 ? kNaN : static_cast<double>(count(c, c)) / static_cast<double>(s);
}

double ConfusionMatrix::iou(std::size_t c) const {
  std::uint64_t fp = 0;
  for (std::size_t t = 0; t < n_; ++t)
    if (t != c) fp += count(t, c);
  const std::uint64_t tp = count(c, c);
  const std::uint64_t denom = support(c) + fp;  // TP + FN + FP
  return denom == 0 ? kNaN : static_cast<double>(tp) / static_cast<double>(denom);
}

double ConfusionMatrix::miou() const {
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < n_; ++c) {
    if (support(c) == 0) continue;
    sum += iou(c);
    ++present;
  }
  return present == 0 ? kNaN : sum / static_cast<double>(present);
}

ClassificationResult summarize(const ConfusionMatrix& cm) {
  ClassificationResult r;
  r.confusion = cm;
  r.top1 = cm.top1();
  r.miou = cm.miou();
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    r.class_top1.push_back(cm.class_top1(c));
    r.class_iou.push_back(cm.iou(c));
  }
  return r;
}

ClassificationResult eval_classification(const DownstreamModel& model, const std::vector<HeadSample>& samples) {
  if (model.config().task != Task::kClassification) data_error("model has a regression head");
  ConfusionMatrix cm(model.config().num_classes);
  for (const auto& s : samples) {
    const std::vector<int> pred = model.predict_classes(*s.tile);
    if (s.labels.size() != pred.size()) data_error("label map of tile '" + s.tile->tile_id + "' has the wrong size");
    cm.add(s.labels, pred);
  }
  return summarize(cm);
}

double mean_absolute_error(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size()) {
    data_error("prediction has " + std::to_string(predicted.size()) + " values, target " + std::to_string(target.size()));
  }
  if (target.empty()) data_error("mean absolute error of an empty map");
  double sum = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) sum += std::abs(predicted[i] - target[i]);
  return sum / static_cast<double>(target.size());
}

double eval_regression(const DownstreamModel& model, const std::vector<HeadSample>& samples) {
  if (samples.empty()) data_error("regression eval needs at least one sample");
  std::vector<double> pred, target;
  for (const auto& s : samples) {
    const auto p = model.predict_values(*s.tile);
    if (p.size() != s.targets.size()) data_error("target map of tile '" + s.tile->tile_id + "' has the wrong size");
    pred.insert(pred.end(), p.begin(), p.end());
    target.insert(target.end(), s.targets.begin(), s.targets.end());
  }
  return mean_absolute_error(pred, target);
}

void write_classification_csv(const ClassificationResult& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) data_error("cannot write " + path.string());
  out << "class,top1,iou\n";
  for (std::size_t c = 0; c < r.class_top1.size(); ++c) {
    if (r.confusion.support(c) == 0) continue;
    out << c << ',' << fmt(r.class_top1[c]) << ',' << fmt(r.class_iou[c]) << '\n';
  }
  out << "all," << fmt(r.top1) << ',' << fmt(r.miou) << '\n';
  if (!out) data_error("failed writing " + path.string());
}

void write_regression_csv(double mae, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) data_error("cannot write " + path.string());
  out << "mae\n" << fmt(mae) << '\n';
  if (!out) data_error("failed writing " + path.string());
}

TargetStats compute_target_stats(const std::vector<const std::vector<double>*>& targets) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto* t : targets) {
    for (double v : *t) sum += v;
    n += t->size();
  }
  if (n == 0) data_error("target statistics need at least one value");
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (const auto* t : targets)
    for (double v : *t) sq += (v - mean) * (v - mean);
  return {mean, std::max(std::sqrt(sq / static_cast<double>(n)), 1e-8)};
}

std::vector<double> normalize_targets(std::span<const double> values, const TargetStats& s) {
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - s.mean) / s.std;
  return out;
}

}  // namespace hyperkd::downstream
