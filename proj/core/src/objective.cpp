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

#include "hyperkd/objective.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "hyperkd/error.hpp"

namespace hyperkd::objective {

namespace nx = hyperkd::numerics;

namespace {

[[noreturn]] void shape_error(const std::string& what, const Tensor& a, const Tensor& b) {
  throw InvariantError("objective", what + ": shape mismatch " + nx::shape_string(a.shape()) + " vs " +
                                        nx::shape_string(b.shape()));
}

void check_recon_pair(const Tensor& truth, const Tensor& pred, std::span<const double> select, const char* what) {
  if (truth.shape() != pred.shape()) shape_error(what, truth, pred);
  if (truth.rank() != 2) throw InvariantError("objective", std::string(what) + ": expected [C, H*W] inputs");
  if (!select.empty() && select.size() != truth.dim(1)) {
    throw InvariantError("objective", std::string(what) + ": selection covers " + std::to_string(select.size()) +
                                          " pixels, inputs have " + std::to_string(truth.dim(1)));
  }
}

// Weights over pixels that sum to 1.
std::vector<double> pixel_weights(std::span<const double> select, std::size_t pixels) {
  std::vector<double> w(pixels, 1.0);
  if (!select.empty()) std::copy(select.begin(), select.end(), w.begin());
  double total = 0.0;
  for (double v : w) {
    if (v < 0.0) throw InvariantError("objective", "negative pixel weight");
    total += v;
  }
  if (total <= 0.0) throw InvariantError("objective", "pixel selection is empty");
  for (double& v : w) v /= total;
  return w;
}

// Weights over a [C, P] tensor for the mean over channels and selected pixels.
std::vector<double> element_weights(std::span<const double> select, std::size_t channels, std::size_t pixels) {
  const auto w = pixel_weights(select, pixels);
  std::vector<double> out(channels * pixels);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t k = 0; k < pixels; ++k) out[c * pixels + k] = w[k] / static_cast<double>(channels);
  return out;
}

Tensor ssim_formula(const Tensor& mx, const Tensor& my, const Tensor& vx, const Tensor& vy, const Tensor& cxy,
                    const SsimConstants& k) {
  const Tensor num = nx::mul(nx::add_scalar(nx::scale(nx::mul(mx, my), 2.0), k.c1()),
                             nx::add_scalar(nx::scale(cxy, 2.0), k.c2()));
  const Tensor den = nx::mul(nx::add_scalar(nx::add(nx::square(mx), nx::square(my)), k.c1()),
                             nx::add_scalar(nx::add(vx, vy), k.c2()));
  return nx::div(num, den);
}

double ssim_formula(double mx, double my, double vx, double vy, double cxy, const SsimConstants& k) {
  return ((2.0 * (mx * my) + k.c1()) * (2.0 * cxy + k.c2())) / ((mx * mx + my * my + k.c1()) * (vx + vy + k.c2()));
}

void check_features(const Tensor& teacher, const Tensor& student, const char* what) {
  if (teacher.rank() != 2 || teacher.shape() != student.shape()) shape_error(what, teacher, student);
  if (teacher.dim(0) == 0) throw InvariantError("objective", std::string(what) + ": no tokens");
}

void check_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw DataError("objective", "temperature must be positive");
}

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const char* what) {
  std::string known;
  for (const auto& [name, value] : table) {
    if (s == name) return value;
    known += known.empty() ? name : std::string(", ") + name;
  }
  throw DataError("objective", "unknown " + std::string(what) + " '" + s + "' (expected one of " + known + ")");
}

}  // namespace

void LossWeights::validate() const {
  for (auto [name, v] : {std::pair{"lambda1", lambda1}, std::pair{"lambda2", lambda2}, std::pair{"alpha", alpha},
                         std::pair{"beta", beta}}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw DataError("objective", std::string(name) + " must be non-negative");
  }
  check_temperature(temperature);
}

const char* region_name(Region r) { return r == Region::kAll ? "all" : "masked_only"; }
Region parse_region(const std::string& s) {
  return parse_enum<Region>(s, {{"masked_only", Region::kMaskedOnly}, {"all", Region::kAll}}, "region");
}
const char* recon_kind_name(ReconKind k) { return k == ReconKind::kHuber ? "huber" : "mse"; }
ReconKind parse_recon_kind(const std::string& s) {
  return parse_enum<ReconKind>(s, {{"mse", ReconKind::kMse}, {"huber", ReconKind::kHuber}}, "reconstruction loss");
}
const char* kd_function_name(KdFunction f) {
  switch (f) {
    case KdFunction::kKld: return "kld";
    case KdFunction::kL1: return "l1";
    case KdFunction::kJs: return "js";
  }
  return "?";
}
KdFunction parse_kd_function(const std::string& s) {
  return parse_enum<KdFunction>(s, {{"kld", KdFunction::kKld}, {"l1", KdFunction::kL1}, {"js", KdFunction::kJs}},
                                "kd function");
}

std::vector<double> pixel_selection(const saliency::PatchMask& mask, std::size_t height, std::size_t width,
                                    std::size_t p, Region region) {
  if (region == Region::kAll) return std::vector<double>(height * width, 1.0);
  if (p == 0 || height % p != 0 || width % p != 0 || mask.size() != (height / p) * (width / p)) {
    throw InvariantError("objective", "mask does not match the image grid");
  }
  const std::size_t cols = width / p;
  std::vector<double> sel(height * width, 0.0);
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t j = 0; j < width; ++j) sel[i * width + j] = mask.masked[(i / p) * cols + j / p] ? 1.0 : 0.0;
  return sel;
}

Tensor mse_loss(const Tensor& truth, const Tensor& pred, std::span<const double> select) {
  check_recon_pair(truth, pred, select, "mse_loss");
  return nx::weighted_sum(nx::square(nx::sub(pred, truth)), element_weights(select, truth.dim(0), truth.dim(1)));
}

Tensor huber_loss(const Tensor& truth, const Tensor& pred, double delta, std::span<const double> select) {
  check_recon_pair(truth, pred, select, "huber_loss");
  return nx::weighted_sum(nx::huber(nx::sub(pred, truth), delta), element_weights(select, truth.dim(0), truth.dim(1)));
}

Tensor ssim_per_channel(const Tensor& truth, const Tensor& pred, const SsimConstants& k,
                        std::span<const double> select) {
  check_recon_pair(truth, pred, select, "ssim");
  const std::size_t pixels = truth.dim(1);
  const Tensor w = Tensor::constant({pixels, 1}, pixel_weights(select, pixels));
  const Tensor mx = nx::matmul(truth, w);
  const Tensor my = nx::matmul(pred, w);
  const Tensor vx = nx::sub(nx::matmul(nx::square(truth), w), nx::square(mx));
  const Tensor vy = nx::sub(nx::matmul(nx::square(pred), w), nx::square(my));
  const Tensor cxy = nx::sub(nx::matmul(nx::mul(truth, pred), w), nx::mul(mx, my));
  return nx::reshape(ssim_formula(mx, my, vx, vy, cxy, k), {truth.dim(0)});
}

Tensor ssim_index(const Tensor& truth, const Tensor& pred, const SsimConstants& k, std::span<const double> select) {
  return nx::mean(ssim_per_channel(truth, pred, k, select));
}

Tensor ssim_loss(const Tensor& truth, const Tensor& pred, const SsimConstants& k, std::span<const double> select) {
  return nx::add_scalar(nx::neg(ssim_index(truth, pred, k, select)), 1.0);
}

Tensor windowed_ssim_index(const Tensor& truth, const Tensor& pred, std::size_t height, std::size_t width,
                           std::size_t window, const SsimConstants& k, std::span<const double> select) {
  check_recon_pair(truth, pred, select, "windowed ssim");
  if (truth.dim(1) != height * width) throw InvariantError("objective", "windowed ssim: H*W does not match inputs");
  if (window % 2 == 0 || window / 2 >= std::min(height, width)) {
    throw DataError("objective", "ssim window must be odd and smaller than the image");
  }
  const std::size_t c = truth.dim(0);
  const Tensor box = Tensor::constant({window, window}, std::vector<double>(window * window,
                                                                            1.0 / static_cast<double>(window * window)));
  auto local = [&](const Tensor& v) {
    return nx::reshape(nx::conv2d(nx::reshape(v, {c, height, width}), box, nx::Padding::kReflect), {c, height * width});
  };
  const Tensor mx = local(truth);
  const Tensor my = local(pred);
  const Tensor vx = nx::sub(local(nx::square(truth)), nx::square(mx));
  const Tensor vy = nx::sub(local(nx::square(pred)), nx::square(my));
  const Tensor cxy = nx::sub(local(nx::mul(truth, pred)), nx::mul(mx, my));
  return nx::weighted_sum(ssim_formula(mx, my, vx, vy, cxy, k), element_weights(select, c, height * width));
}

Tensor feature_kld(const Tensor& teacher, const Tensor& student, double temperature) {
  check_features(teacher, student, "feature_kld");
  check_temperature(temperature);
  const double inv_t = 1.0 / temperature;
  const Tensor lt = nx::log_softmax(nx::scale(teacher, inv_t), 1);
  const Tensor ls = nx::log_softmax(nx::scale(student, inv_t), 1);
  const double factor = temperature * temperature / static_cast<double>(teacher.dim(0));
  return nx::scale(nx::sum(nx::mul(nx::exp(lt), nx::sub(lt, ls))), factor);
}

Tensor feature_l1(const Tensor& teacher, const Tensor& student) {
  check_features(teacher, student, "feature_l1");
  return nx::mean(nx::abs(nx::sub(teacher, student)));
}

Tensor feature_js(const Tensor& teacher, const Tensor& student, double temperature) {
  check_features(teacher, student, "feature_js");
  check_temperature(temperature);
  const double inv_t = 1.0 / temperature;
  const Tensor lp = nx::log_softmax(nx::scale(teacher, inv_t), 1);
  const Tensor lq = nx::log_softmax(nx::scale(student, inv_t), 1);
  // log(p / m) = -log(0.5 + 0.5 q/p); exact zero when p == q.
  auto half_kl = [](const Tensor& la, const Tensor& lb) {
    const Tensor log_ratio = nx::neg(nx::log(nx::add_scalar(nx::scale(nx::exp(nx::sub(lb, la)), 0.5), 0.5)));
    return nx::sum(nx::mul(nx::exp(la), log_ratio));
  };
  const double factor = 0.5 / static_cast<double>(teacher.dim(0));
  return nx::add(nx::scale(half_kl(lp, lq), factor), nx::scale(half_kl(lq, lp), factor));
}

Tensor feature_loss(KdFunction f, const Tensor& teacher, const Tensor& student, double temperature) {
  switch (f) {
    case KdFunction::kKld: return feature_kld(teacher, student, temperature);
    case KdFunction::kL1: return feature_l1(teacher, student);
    case KdFunction::kJs: return feature_js(teacher, student, temperature);
  }
  throw InvariantError("objective", "unknown kd function");
}

WeightedLoss total_loss(const Tensor& l_mse, const Tensor& l_ssim, const Tensor& l_kd, const LossWeights& w) {
  w.validate();
  auto value = [](const Tensor& t) { return t.empty() ? 0.0 : t.item(); };
  WeightedLoss out;
  out.breakdown.l_mse = value(l_mse);
  out.breakdown.l_ssim = value(l_ssim);
  out.breakdown.l_kd = value(l_kd);
  out.breakdown.l_recon = w.lambda1 * out.breakdown.l_mse + w.lambda2 * out.breakdown.l_ssim;

  std::vector<Tensor> terms;
  auto push = [&](const Tensor& t, double coeff) {
    if (coeff != 0.0 && !t.empty()) terms.push_back(nx::scale(t, coeff));
  };
  push(l_mse, w.alpha * w.lambda1);
  push(l_ssim, w.alpha * w.lambda2);
  push(l_kd, w.beta);
  if (terms.empty()) {
    out.total = Tensor::scalar(0.0);
  } else {
    out.total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) out.total = nx::add(out.total, terms[i]);
  }
  out.breakdown.l_total = out.total.item();
  return out;
}

// ---- metrics -------------------------------------------------------------------

Tensor to_reflectance(const Tensor& normalized, const BandStats& stats) {
  if (normalized.rank() < 1 || normalized.dim(0) != stats.size()) {
    throw InvariantError("objective", "band stats do not match the channel count");
  }
  return nx::channel_affine(normalized, stats.std, stats.mean);
}

std::vector<double> clamp01(std::span<const double> values) {
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = std::clamp(values[i], 0.0, 1.0);
  return out;
}

double psnr(std::span<const double> truth, std::span<const double> pred, double max_value) {
  if (truth.size() != pred.size() || truth.empty()) throw InvariantError("objective", "psnr: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = truth[i] - pred[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(truth.size());
  if (mse == 0.0) return kPsnrCeiling;
  return std::min(kPsnrCeiling, 10.0 * std::log10(max_value * max_value / mse));
}

namespace {

void check_channels(std::span<const double> truth, std::span<const double> pred, std::size_t channels,
                    std::span<const double> select) {
  if (truth.size() != pred.size() || channels == 0 || truth.size() % channels != 0) {
    throw InvariantError("objective", "metric inputs do not split into channels");
  }
  if (!select.empty() && select.size() != truth.size() / channels) {
    throw InvariantError("objective", "metric selection does not match the pixel count");
  }
}

}  // namespace

std::vector<double> per_channel_psnr(std::span<const double> truth, std::span<const double> pred,
                                     std::size_t channels, double max_value, std::span<const double> select) {
  check_channels(truth, pred, channels, select);
  const std::size_t pixels = truth.size() / channels;
  const auto w = pixel_weights(select, pixels);
  std::vector<double> out(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double mse = 0.0;
    for (std::size_t k = 0; k < pixels; ++k) {
      const double d = truth[c * pixels + k] - pred[c * pixels + k];
      mse += w[k] * d * d;
    }
    out[c] = mse == 0.0 ? kPsnrCeiling : std::min(kPsnrCeiling, 10.0 * std::log10(max_value * max_value / mse));
  }
  return out;
}

std::vector<double> per_channel_ssim(std::span<const double> truth, std::span<const double> pred,
                                     std::size_t channels, const SsimConstants& k, std::span<const double> select) {
  check_channels(truth, pred, channels, select);
  const std::size_t pixels = truth.size() / channels;
  const auto w = pixel_weights(select, pixels);
  std::vector<double> out(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* x = truth.data() + c * pixels;
    const double* y = pred.data() + c * pixels;
    double mx = 0, my = 0, exx = 0, eyy = 0, exy = 0;
    for (std::size_t i = 0; i < pixels; ++i) {
      mx += w[i] * x[i];
      my += w[i] * y[i];
      exx += w[i] * (x[i] * x[i]);
      eyy += w[i] * (y[i] * y[i]);
      exy += w[i] * (x[i] * y[i]);
    }
    out[c] = ssim_formula(mx, my, exx - mx * mx, eyy - my * my, exy - mx * my, k);
  }
  return out;
}

TileMetrics tile_metrics(const std::string& tile_id, std::span<const double> truth01, std::span<const double> pred01,
                         std::size_t channels, std::span<const double> select) {
  check_channels(truth01, pred01, channels, select);
  TileMetrics m;
  m.tile_id = tile_id;
  m.channel_psnr = per_channel_psnr(truth01, pred01, channels, 1.0, select);
  m.channel_ssim = per_channel_ssim(truth01, pred01, channels, {}, select);
  if (select.empty()) {
    m.psnr = psnr(truth01, pred01, 1.0);
  } else {
    std::vector<double> t, p;
    const std::size_t pixels = truth01.size() / channels;
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t k = 0; k < pixels; ++k)
        if (select[k] != 0.0) {
          t.push_back(truth01[c * pixels + k]);
          p.push_back(pred01[c * pixels + k]);
        }
    m.psnr = psnr(t, p, 1.0);
  }
  double s = 0.0;
  for (double v : m.channel_ssim) s += v;
  m.ssim = s / static_cast<double>(channels);
  return m;
}

void MetricsAccumulator::add(const TileMetrics& m) {
  if (!tiles_.empty() && m.channel_psnr.size() != tiles_.front().channel_psnr.size()) {
    throw InvariantError("objective", "channel count changed within an evaluation set");
  }
  tiles_.push_back(m);
}

double MetricsAccumulator::mean_psnr() const {
  double s = 0.0;
  for (const auto& t : tiles_) s += t.psnr;
  return tiles_.empty() ? 0.0 : s / static_cast<double>(tiles_.size());
}

double MetricsAccumulator::mean_ssim() const {
  double s = 0.0;
  for (const auto& t : tiles_) s += t.ssim;
  return tiles_.empty() ? 0.0 : s / static_cast<double>(tiles_.size());
}

namespace {

std::vector<double> column_mean(const std::vector<TileMetrics>& tiles, std::vector<double> TileMetrics::*field) {
  if (tiles.empty()) return {};
  std::vector<double> out((tiles.front().*field).size(), 0.0);
  for (const auto& t : tiles)
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += (t.*field)[c];
  for (double& v : out) v /= static_cast<double>(tiles.size());
  return out;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("objective", "cannot write " + path.string());
  out << std::setprecision(10);
  return out;
}

}  // namespace

std::vector<double> MetricsAccumulator::channel_psnr_mean() const {
  return column_mean(tiles_, &TileMetrics::channel_psnr);
}

std::vector<double> MetricsAccumulator::channel_ssim_mean() const {
  return column_mean(tiles_, &TileMetrics::channel_ssim);
}

double MetricsAccumulator::max_channel_psnr() const {
  const auto means = channel_psnr_mean();
  return means.empty() ? 0.0 : *std::max_element(means.begin(), means.end());
}

void MetricsAccumulator::write_tiles_csv(const std::filesystem::path& path) const {
  auto out = open_csv(path);
  out << "tile_id,psnr,ssim\n";
  for (const auto& t : tiles_) out << t.tile_id << ',' << t.psnr << ',' << t.ssim << '\n';
}

void MetricsAccumulator::write_channels_csv(const std::filesystem::path& path) const {
  auto out = open_csv(path);
  out << "channel,psnr_mean,ssim_mean\n";
  const auto p = channel_psnr_mean();
  const auto s = channel_ssim_mean();
  for (std::size_t c = 0; c < p.size(); ++c) out << c << ',' << p[c] << ',' << s[c] << '\n';
}

}  // namespace hyperkd::objective
