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
#include <optional>
#include <string>
#include <vector>

#include "hyperkd/hypercube.hpp"

namespace hyperkd::saliency {

/// Parameters of one Gabor kernel, lengths in pixels and angles in radians.
struct GaborParams {
  double wavelength = 4.0;
  double orientation = 0.0;
  double phase = 0.0;
  double sigma = 2.24;
  double aspect = 0.5;
  std::size_t kernel_size = 7;
};

void validate(const GaborParams& p);

/// Samples exp(-(x'^2 + g^2 y'^2) / (2 s^2)) * cos(2 pi x' / l + psi) on the
/// integer grid centred at zero, x' = x cos t + y sin t, y' = -x sin t + y cos t.
/// Row index is y, column index is x.
std::vector<double> gabor_kernel(const GaborParams& p);

/// Four orientations {0, pi/4, pi/2, 3pi/4}, wavelength p/2, sigma 0.56
/// wavelength, aspect 0.5, zero phase, side p-1 rounded up to odd.
std::vector<GaborParams> default_gabor_bank(std::size_t patch_size);

/// Mean over the bank of the Euclidean norm of the response of a p x p patch
/// to each mean-subtracted kernel, with reflect padding.
double gabor_score(const Plane& patch, const std::vector<GaborParams>& bank);

struct WaveletSpec {
  std::size_t levels = 1;  // Haar only
};

struct HaarSubbands {
  Plane ll, lh, hl, hh;
};

/// Single-level orthonormal 2D Haar transform of an even-sided plane. For a
/// 2x2 block [a b; c d]: ll = (a+b+c+d)/2, lh = (a-b+c-d)/2 (horizontal
/// detail), hl = (a+b-c-d)/2 (vertical detail), hh = (a-b-c+d)/2.
HaarSubbands haar_dwt2(const Plane& tile);
Plane haar_idwt2(const HaarSubbands& bands);

/// Euclidean norm of all detail coefficients across `levels` Haar levels.
double wavelet_score(const Plane& patch, const WaveletSpec& spec);

enum class Method { kGabor, kWavelet, kCombined };

const char* method_name(Method m);
Method parse_method(const std::string& s);

struct ScoreVector {
  std::vector<double> scores;  // row-major over the patch grid
  std::size_t patch_size = 0;
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;

  std::size_t size() const { return scores.size(); }
};

/// Scores every p x p patch of the channel-mean grayscale image. kCombined
/// sums the Gabor and wavelet scores after dividing each by its mean over
/// the image.
ScoreVector score_patches(const HyperCube& cube, Method method, std::size_t patch_size,
                          const WaveletSpec& wavelet = {});

enum class MaskMode { kSalientMasked, kSalientVisible, kRandom };

const char* mask_mode_name(MaskMode m);
MaskMode parse_mask_mode(const std::string& s);

struct PatchMask {
  std::vector<bool> masked;
  double ratio = 0.0;
  MaskMode mode = MaskMode::kRandom;

  std::size_t size() const { return masked.size(); }
  std::size_t masked_count() const;
  std::vector<std::size_t> visible_indices() const;
  std::vector<std::size_t> masked_indices() const;
};

/// round(r * N) with halves rounded up.
std::size_t masked_count_for(double ratio, std::size_t n);

/// Exactly masked_count_for(r, N) patches are masked in every mode. Salient
/// modes rank patches by descending score, ties by ascending index;
/// kSalientMasked masks the head of the ranking, kSalientVisible keeps the
/// head visible and masks the tail. kRandom draws a seeded subset.
PatchMask build_mask(const ScoreVector& scores, double ratio, MaskMode mode, std::uint64_t seed);
PatchMask random_mask(std::size_t n, double ratio, std::uint64_t seed);

/// Guided mode before `random_switch_epoch`, random from it on. No switch
/// epoch means the guided mode is used forever; 0 means random only.
struct MaskCurriculum {
  MaskMode guided = MaskMode::kSalientMasked;
  std::optional<std::size_t> random_switch_epoch;
};

MaskMode mask_schedule(std::size_t epoch, const MaskCurriculum& curriculum);

/// Binary PGM (P5) heat map of scores scaled to 0..255, one pixel per patch
/// enlarged by `scale`.
std::string scores_to_pgm(const ScoreVector& scores, std::size_t scale = 8);

}  // namespace hyperkd::saliency
