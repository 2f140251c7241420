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

#include "hyperkd/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "hyperkd/error.hpp"
#include "hyperkd/numerics/tensor.hpp"
#include "hyperkd/parallel.hpp"
#include "hyperkd/rng.hpp"

namespace hyperkd::saliency {

namespace nx = hyperkd::numerics;

namespace {
[[noreturn]] void bad(const std::string& msg) { throw DataError("saliency", msg); }
}  // namespace

void validate(const GaborParams& p) {
  if (!(p.wavelength > 0.0)) bad("Gabor wavelength must be positive");
  if (!(p.sigma > 0.0)) bad("Gabor sigma must be positive");
  if (!(p.aspect > 0.0)) bad("Gabor aspect ratio must be positive");
  if (p.kernel_size % 2 == 0) bad("Gabor kernel size must be odd");
}

std::vector<double> gabor_kernel(const GaborParams& p) {
  validate(p);
  const long n = static_cast<long>(p.kernel_size);
  const long half = n / 2;
  const double ct = std::cos(p.orientation), st = std::sin(p.orientation);
  std::vector<double> k(static_cast<std::size_t>(n * n));
  for (long r = 0; r < n; ++r) {
    const double y = static_cast<double>(r - half);
    for (long c = 0; c < n; ++c) {
      const double x = static_cast<double>(c - half);
      const double xr = x * ct + y * st;
      const double yr = -x * st + y * ct;
      k[static_cast<std::size_t>(r * n + c)] =
          std::exp(-(xr * xr + p.aspect * p.aspect * yr * yr) / (2.0 * p.sigma * p.sigma)) *
          std::cos(2.0 * std::numbers::pi * xr / p.wavelength + p.phase);
    }
  }
  return k;
}

std::vector<GaborParams> default_gabor_bank(std::size_t patch_size) {
  if (patch_size < 2) bad("patch size must be at least 2 for the Gabor bank");
  std::size_t side = patch_size - 1;
  if (side % 2 == 0) ++side;
  std::vector<GaborParams> bank;
  for (int k = 0; k < 4; ++k) {
    GaborParams p;
    p.wavelength = static_cast<double>(patch_size) / 2.0;
    p.orientation = k * std::numbers::pi / 4.0;
    p.phase = 0.0;
    p.sigma = 0.56 * p.wavelength;
    p.aspect = 0.5;
    p.kernel_size = side;
    bank.push_back(p);
  }
  return bank;
}

double gabor_score(const Plane& patch, const std::vector<GaborParams>& bank) {
  if (bank.empty()) bad("Gabor bank is empty");
  // The kernels are zero-sum, so the response does not depend on the
  // reference level; subtracting one makes constant patches score exactly 0.
  std::vector<double> centred = patch.values;
  const double reference = centred.empty() ? 0.0 : centred.front();
  for (auto& v : centred) v -= reference;
  const auto image = nx::Tensor::constant({1, patch.height, patch.width}, std::move(centred));
  double total = 0.0;
  for (const auto& p : bank) {
    auto k = gabor_kernel(p);
    const double m = std::accumulate(k.begin(), k.end(), 0.0) / static_cast<double>(k.size());
    for (auto& v : k) v -= m;
    const auto response = nx::conv2d(image, nx::Tensor::constant({p.kernel_size, p.kernel_size}, k),
                                     nx::Padding::kReflect);
    double ss = 0.0;
    for (double v : response.data()) ss += v * v;
    total += std::sqrt(ss);
  }
  return total / static_cast<double>(bank.size());
}

HaarSubbands haar_dwt2(const Plane& tile) {
  if (tile.height % 2 != 0 || tile.width % 2 != 0) bad("Haar transform needs even side lengths");
  const std::size_t h = tile.height / 2, w = tile.width / 2;
  HaarSubbands s;
  for (Plane* p : {&s.ll, &s.lh, &s.hl, &s.hh}) *p = Plane{h, w, std::vector<double>(h * w)};
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double a = tile.at(2 * i, 2 * j), b = tile.at(2 * i, 2 * j + 1);
      const double c = tile.at(2 * i + 1, 2 * j), d = tile.at(2 * i + 1, 2 * j + 1);
      s.ll.values[i * w + j] = 0.5 * (a + b + c + d);
      s.lh.values[i * w + j] = 0.5 * (a - b + c - d);
      s.hl.values[i * w + j] = 0.5 * (a + b - c - d);
      s.hh.values[i * w + j] = 0.5 * (a - b - c + d);
    }
  }
  return s;
}

Plane haar_idwt2(const HaarSubbands& s) {
  const std::size_t h = s.ll.height, w = s.ll.width;
  Plane out{2 * h, 2 * w, std::vector<double>(4 * h * w)};
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double ll = s.ll.at(i, j), lh = s.lh.at(i, j), hl = s.hl.at(i, j), hh = s.hh.at(i, j);
      out.values[(2 * i) * out.width + 2 * j] = 0.5 * (ll + lh + hl + hh);
      out.values[(2 * i) * out.width + 2 * j + 1] = 0.5 * (ll - lh + hl - hh);
      out.values[(2 * i + 1) * out.width + 2 * j] = 0.5 * (ll + lh - hl - hh);
      out.values[(2 * i + 1) * out.width + 2 * j + 1] = 0.5 * (ll - lh - hl + hh);
    }
  }
  return out;
}

double wavelet_score(const Plane& patch, const WaveletSpec& spec) {
  if (spec.levels < 1) bad("wavelet levels must be at least 1");
  const std::size_t div = std::size_t{1} << spec.levels;
  if (patch.height % div != 0 || patch.width % div != 0) {
    bad("2^levels must divide the patch side");
  }
  double ss = 0.0;
  Plane current = patch;
  for (std::size_t l = 0; l < spec.levels; ++l) {
    HaarSubbands s = haar_dwt2(current);
    for (const Plane* p : {&s.lh, &s.hl, &s.hh})
      for (double v : p->values) ss += v * v;
    current = std::move(s.ll);
  }
  return std::sqrt(ss);
}

const char* method_name(Method m) {
  switch (m) {
    case Method::kGabor: return "gabor";
    case Method::kWavelet: return "wavelet";
    case Method::kCombined: return "combined";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "gabor") return Method::kGabor;
  if (s == "wavelet") return Method::kWavelet;
  if (s == "combined") return Method::kCombined;
  bad("unknown saliency method '" + s + "' (expected gabor, wavelet, combined)");
}

namespace {

Plane extract_patch(const Plane& gray, std::size_t r, std::size_t c, std::size_t p) {
  Plane patch{p, p, std::vector<double>(p * p)};
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) patch.values[i * p + j] = gray.at(r * p + i, c * p + j);
  return patch;
}

std::vector<double> score_grid(const Plane& gray, std::size_t p, std::size_t rows, std::size_t cols,
                               Method method, const WaveletSpec& wavelet) {
  std::vector<double> scores(rows * cols);
  const auto bank = method == Method::kWavelet ? std::vector<GaborParams>{} : default_gabor_bank(p);
  parallel_for(scores.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const Plane patch = extract_patch(gray, k / cols, k % cols, p);
      scores[k] = method == Method::kGabor ? gabor_score(patch, bank) : wavelet_score(patch, wavelet);
    }
  });
  return scores;
}

}  // namespace

ScoreVector score_patches(const HyperCube& cube, Method method, std::size_t patch_size,
                          const WaveletSpec& wavelet) {
  if (patch_size == 0 || cube.height % patch_size != 0 || cube.width % patch_size != 0) {
    bad("patch size " + std::to_string(patch_size) + " does not divide " + std::to_string(cube.height) + "x" +
        std::to_string(cube.width));
  }
  ScoreVector out;
  out.patch_size = patch_size;
  out.grid_rows = cube.height / patch_size;
  out.grid_cols = cube.width / patch_size;
  const Plane gray = channel_mean(cube);
  if (method != Method::kCombined) {
    out.scores = score_grid(gray, patch_size, out.grid_rows, out.grid_cols, method, wavelet);
  } else {
    auto g = score_grid(gray, patch_size, out.grid_rows, out.grid_cols, Method::kGabor, wavelet);
    auto w = score_grid(gray, patch_size, out.grid_rows, out.grid_cols, Method::kWavelet, wavelet);
    const auto mean_of = [](const std::vector<double>& v) {
      return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    const double mg = mean_of(g), mw = mean_of(w);
    out.scores.resize(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) {
      out.scores[k] = (mg > 0.0 ? g[k] / mg : 0.0) + (mw > 0.0 ? w[k] / mw : 0.0);
    }
  }
  return out;
}

const char* mask_mode_name(MaskMode m) {
  switch (m) {
    case MaskMode::kSalientMasked: return "salient_masked";
    case MaskMode::kSalientVisible: return "salient_visible";
    case MaskMode::kRandom: return "random";
  }
  return "?";
}

MaskMode parse_mask_mode(const std::string& s) {
  if (s == "salient_masked") return MaskMode::kSalientMasked;
  if (s == "salient_visible") return MaskMode::kSalientVisible;
  if (s == "random") return MaskMode::kRandom;
  bad("unknown mask mode '" + s + "' (expected salient_masked, salient_visible, random)");
}

std::size_t PatchMask::masked_count() const {
  return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), true));
}

std::vector<std::size_t> PatchMask::visible_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (!masked[i]) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> PatchMask::masked_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (masked[i]) out.push_back(i);
  }
  return out;
}

std::size_t masked_count_for(double ratio, std::size_t n) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) bad("mask ratio must lie in [0, 1]");
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
  return std::min(k, n);
}

PatchMask random_mask(std::size_t n, double ratio, std::uint64_t seed) {
  const std::size_t k = masked_count_for(ratio, n);
  PatchMask m{std::vector<bool>(n, false), ratio, MaskMode::kRandom};
  Rng rng(seed);
  const auto perm = rng.permutation(n);
  for (std::size_t i = 0; i < k; ++i) m.masked[perm[i]] = true;
  return m;
}

PatchMask build_mask(const ScoreVector& scores, double ratio, MaskMode mode, std::uint64_t seed) {
  const std::size_t n = scores.size();
  if (mode == MaskMode::kRandom) return random_mask(n, ratio, seed);
  const std::size_t k = masked_count_for(ratio, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores.scores[a] > scores.scores[b];
  });
  PatchMask m{std::vector<bool>(n, false), ratio, mode};
  if (mode == MaskMode::kSalientMasked) {
    for (std::size_t i = 0; i < k; ++i) m.masked[order[i]] = true;
  } else {
    for (std::size_t i = n - k; i < n; ++i) m.masked[order[i]] = true;
  }
  return m;
}

MaskMode mask_schedule(std::size_t epoch, const MaskCurriculum& curriculum) {
  if (curriculum.random_switch_epoch && epoch >= *curriculum.random_switch_epoch) return MaskMode::kRandom;
  return curriculum.guided;
}

std::string scores_to_pgm(const ScoreVector& scores, std::size_t scale) {
  if (scale == 0) scale = 1;
  const double hi = scores.scores.empty() ? 0.0 : *std::max_element(scores.scores.begin(), scores.scores.end());
  const std::size_t w = scores.grid_cols * scale, h = scores.grid_rows * scale;
  std::ostringstream os;
  os << "P5\n" << w << ' ' << h << "\n255\n";
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double s = scores.scores[(i / scale) * scores.grid_cols + j / scale];
      const double v = hi > 0.0 ? 255.0 * s / hi : 0.0;
      os.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 255.0)))));
    }
  }
  return os.str();
}

}  // namespace hyperkd::saliency
