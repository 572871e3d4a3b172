#pragma once

#include <utility>

#include "latentvol/random.hpp"
#include "latentvol/volume.hpp"

namespace latentvol {

/// Trilinear resampling to a new voxel spacing. Output extent per axis is
/// round(n * old_spacing / new_spacing); output voxel i samples the input at
/// i * new_spacing / old_spacing, clamped to the last voxel.
Volume resample(const Volume& v, const Spacing& target_spacing);

/// out = slope * raw + intercept; the result is tagged as CT.
Volume hu_convert(const Volume& raw, double slope, double intercept);

struct CropOptions {
  /// Zero-pad axes where the target is larger than the source instead of failing.
  bool allow_pad = false;
};

/// Crops around the centre with per-axis offset floor((src - dst) / 2).
/// Oversized targets are padded symmetrically when CropOptions::allow_pad is set.
Volume center_crop(const Volume& v, const Shape3& target, CropOptions options = {});

/// Trilinear resize with corner-aligned sampling (output corners land on input corners).
Volume resize(const Volume& v, const Shape3& target);

/// Exact affine map of [min, max] onto [lo, hi]. Throws ValueError for a constant volume.
Volume minmax_normalize(const Volume& v, double lo = -1.0, double hi = 1.0);

/// Reverses the volume along `axis`.
Volume flip(const Volume& v, Axis axis);

/// Flips along `axis` with probability p. Exactly one draw is taken from rng.
Volume flip_augment(const Volume& v, Axis axis, double p, Rng& rng, bool* flipped = nullptr);

/// Splits along the width axis; the left part receives floor(W/2) columns.
std::pair<Volume, Volume> split_lateral(const Volume& v);

/// Concatenates two volumes along the width axis (inverse of split_lateral).
Volume concat_width(const Volume& left, const Volume& right);

/// Trilinear interpolation at fractional voxel coordinates, each clamped to the grid.
double sample_trilinear(const Volume& v, double h, double w, double d);

}  // namespace latentvol
