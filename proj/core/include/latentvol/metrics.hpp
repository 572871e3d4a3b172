#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "latentvol/volume.hpp"

namespace latentvol::metrics {

struct SsimParams {
  /// Odd side length of the Gaussian window.
  std::int64_t window = 7;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  /// Peak-to-peak data range; C1 = (k1 L)^2, C2 = (k2 L)^2.
  double data_range = 2.0;
  /// For [H, W, D] inputs: a cubic window over the volume instead of the
  /// default mean over depth slices of 2D SSIM.
  bool volumetric = false;
};

/// Structural similarity of two images [H, W] or volumes [H, W, D] (slice-wise
/// 2D windows averaged over depth unless `volumetric`). Windows are applied
/// without padding. Throws ShapeError for mismatched inputs or a window larger
/// than the image, ValueError for an even window.
double ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimParams& params = {});
double ssim(const Volume& a, const Volume& b, const SsimParams& params = {});

/// The standard five scale exponents, rescaled to sum to exactly one.
std::vector<double> default_ms_ssim_weights();

struct MsSsimParams {
  std::int64_t n_scales = 5;
  std::vector<double> weights = default_ms_ssim_weights();
  SsimParams ssim;
  /// Refuse inputs too small for n_scales instead of dropping the coarsest scales.
  bool strict = false;
};

struct MsSsimResult {
  double value = 0.0;
  std::int64_t scales_used = 0;
  /// True when scales were dropped because the input is too small.
  bool reduced = false;
};

/// Largest number of dyadic scales (<= requested) for which the window still fits.
std::int64_t ms_ssim_scales(const torch::IntArrayRef& shape, const MsSsimParams& params);

/// Multi-scale SSIM: contrast-structure terms at every scale but the coarsest,
/// full SSIM at the coarsest, each clamped at zero and raised to its weight.
/// With fewer usable scales the leading weights are kept and renormalized.
/// Throws ValueError for invalid weights and ShapeError in strict mode (or when no scale fits).
MsSsimResult ms_ssim_detailed(const torch::Tensor& a, const torch::Tensor& b, const MsSsimParams& params = {});
double ms_ssim(const torch::Tensor& a, const torch::Tensor& b, const MsSsimParams& params = {});
double ms_ssim(const Volume& a, const Volume& b, const MsSsimParams& params = {});

struct DiversityReport {
  double mean = 0.0;
  std::int64_t n_pairs = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
  std::vector<double> scores;
};

/// Mean MS-SSIM over n_pairs index pairs i != j drawn uniformly (with
/// replacement across pairs). Higher means less diverse; identical inputs give
/// exactly 1. Throws ValueError for fewer than two volumes or n_pairs < 1.
DiversityReport diversity_score(const std::vector<Volume>& volumes, std::int64_t n_pairs, std::uint64_t seed,
                                const MsSsimParams& params = {});

/// 2|A n B| / (|A| + |B|), and 1 when both masks are empty. Entries must be 0
/// or 1 (ValueError otherwise); shapes must match (ShapeError).
double dice(const torch::Tensor& a, const torch::Tensor& b);
double dice(const Volume& a, const Volume& b);

}  // namespace latentvol::metrics
