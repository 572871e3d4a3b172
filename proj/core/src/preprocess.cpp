#include "latentvol/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "latentvol/errors.hpp"

namespace latentvol {

namespace {

struct Lerp1 {
  std::int64_t i0;
  std::int64_t i1;
  double frac;
};

Lerp1 lerp_coord(double x, std::int64_t n) {
  x = std::clamp(x, 0.0, static_cast<double>(n - 1));
  const auto i0 = static_cast<std::int64_t>(std::floor(x));
  const auto i1 = std::min(i0 + 1, n - 1);
  return {i0, i1, x - static_cast<double>(i0)};
}

// Maps each output index of one axis to its interpolation stencil.
template <typename CoordFn>
std::vector<Lerp1> stencils(std::int64_t out_n, std::int64_t in_n, CoordFn coord) {
  std::vector<Lerp1> s(static_cast<std::size_t>(out_n));
  for (std::int64_t i = 0; i < out_n; ++i) s[static_cast<std::size_t>(i)] = lerp_coord(coord(i), in_n);
  return s;
}

Volume interpolate(const Volume& v, const Shape3& out_shape, const std::vector<Lerp1>& sh,
                   const std::vector<Lerp1>& sw, const std::vector<Lerp1>& sd) {
  std::vector<float> out(static_cast<std::size_t>(out_shape.numel()));
  std::size_t o = 0;
  for (const auto& a : sh) {
    for (const auto& b : sw) {
      for (const auto& c : sd) {
        const double c000 = v.at(a.i0, b.i0, c.i0), c001 = v.at(a.i0, b.i0, c.i1);
        const double c010 = v.at(a.i0, b.i1, c.i0), c011 = v.at(a.i0, b.i1, c.i1);
        const double c100 = v.at(a.i1, b.i0, c.i0), c101 = v.at(a.i1, b.i0, c.i1);
        const double c110 = v.at(a.i1, b.i1, c.i0), c111 = v.at(a.i1, b.i1, c.i1);
        const double c00 = c000 * (1.0 - c.frac) + c001 * c.frac;
        const double c01 = c010 * (1.0 - c.frac) + c011 * c.frac;
        const double c10 = c100 * (1.0 - c.frac) + c101 * c.frac;
        const double c11 = c110 * (1.0 - c.frac) + c111 * c.frac;
        const double c0 = c00 * (1.0 - b.frac) + c01 * b.frac;
        const double c1 = c10 * (1.0 - b.frac) + c11 * b.frac;
        out[o++] = static_cast<float>(c0 * (1.0 - a.frac) + c1 * a.frac);
      }
    }
  }
  Volume result(out_shape, std::move(out), v.spacing(), v.modality());
  result.set_spacing_defaulted(v.spacing_defaulted());
  return result;
}

}  // namespace

double sample_trilinear(const Volume& v, double h, double w, double d) {
  const auto a = lerp_coord(h, v.shape().h);
  const auto b = lerp_coord(w, v.shape().w);
  const auto c = lerp_coord(d, v.shape().d);
  auto at = [&](std::int64_t i, std::int64_t j, std::int64_t k) { return static_cast<double>(v.at(i, j, k)); };
  const double c00 = at(a.i0, b.i0, c.i0) * (1.0 - c.frac) + at(a.i0, b.i0, c.i1) * c.frac;
  const double c01 = at(a.i0, b.i1, c.i0) * (1.0 - c.frac) + at(a.i0, b.i1, c.i1) * c.frac;
  const double c10 = at(a.i1, b.i0, c.i0) * (1.0 - c.frac) + at(a.i1, b.i0, c.i1) * c.frac;
  const double c11 = at(a.i1, b.i1, c.i0) * (1.0 - c.frac) + at(a.i1, b.i1, c.i1) * c.frac;
  return (c00 * (1.0 - b.frac) + c01 * b.frac) * (1.0 - a.frac) + (c10 * (1.0 - b.frac) + c11 * b.frac) * a.frac;
}

Volume resample(const Volume& v, const Spacing& target) {
  for (const double s : target) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ValueError("target spacing components must be positive");
  }
  Shape3 out_shape;
  for (int ax = 0; ax < 3; ++ax) {
    const double extent = static_cast<double>(v.shape()[ax]) * v.spacing()[ax] / target[ax];
    out_shape[ax] = static_cast<std::int64_t>(std::llround(extent));
    if (out_shape[ax] < 1) {
      throw ShapeError("resampling to spacing " + std::to_string(target[ax]) + " collapses axis " +
                       std::to_string(ax) + " to zero voxels");
    }
  }
  auto axis_stencil = [&](int ax) {
    const double step = target[ax] / v.spacing()[ax];
    return stencils(out_shape[ax], v.shape()[ax], [step](std::int64_t i) { return static_cast<double>(i) * step; });
  };
  Volume out = interpolate(v, out_shape, axis_stencil(0), axis_stencil(1), axis_stencil(2));
  out.set_spacing(target);
  out.set_value_range(v.value_range());
  return out;
}

Volume hu_convert(const Volume& raw, double slope, double intercept) {
  std::vector<float> out(raw.data().size());
  std::transform(raw.data().begin(), raw.data().end(), out.begin(),
                 [&](float x) { return static_cast<float>(slope * x + intercept); });
  Volume v = raw.with_data(std::move(out));
  v.set_modality(Modality::CT);
  v.set_value_range(std::nullopt);
  return v;
}

Volume center_crop(const Volume& v, const Shape3& target, CropOptions options) {
  if (target.h < 1 || target.w < 1 || target.d < 1) throw ShapeError("crop target extents must be >= 1");
  // Signed offset of the target origin inside the source: negative means padding.
  std::array<std::int64_t, 3> offset{};
  for (int ax = 0; ax < 3; ++ax) {
    const std::int64_t src = v.shape()[ax];
    const std::int64_t dst = target[ax];
    if (dst > src && !options.allow_pad) {
      throw ShapeError("crop target " + target.str() + " exceeds source " + v.shape().str() +
                       " and padding is disabled");
    }
    offset[ax] = dst <= src ? (src - dst) / 2 : -((dst - src) / 2);
  }
  std::vector<float> out(static_cast<std::size_t>(target.numel()), 0.0F);
  std::size_t o = 0;
  for (std::int64_t i = 0; i < target.h; ++i) {
    const std::int64_t si = i + offset[0];
    for (std::int64_t j = 0; j < target.w; ++j) {
      const std::int64_t sj = j + offset[1];
      for (std::int64_t k = 0; k < target.d; ++k, ++o) {
        const std::int64_t sk = k + offset[2];
        if (si >= 0 && si < v.shape().h && sj >= 0 && sj < v.shape().w && sk >= 0 && sk < v.shape().d) {
          out[o] = v.at(si, sj, sk);
        }
      }
    }
  }
  Volume result(target, std::move(out), v.spacing(), v.modality());
  result.set_spacing_defaulted(v.spacing_defaulted());
  return result;
}

Volume resize(const Volume& v, const Shape3& target) {
  if (target.h < 1 || target.w < 1 || target.d < 1) throw ShapeError("resize target extents must be >= 1");
  auto axis_stencil = [&](int ax) {
    const std::int64_t in_n = v.shape()[ax];
    const std::int64_t out_n = target[ax];
    if (out_n == 1) {
      const double mid = static_cast<double>(in_n - 1) / 2.0;
      return stencils(1, in_n, [mid](std::int64_t) { return mid; });
    }
    const double scale = static_cast<double>(in_n - 1) / static_cast<double>(out_n - 1);
    return stencils(out_n, in_n, [scale](std::int64_t i) { return static_cast<double>(i) * scale; });
  };
  Volume out = interpolate(v, target, axis_stencil(0), axis_stencil(1), axis_stencil(2));
  // The physical field of view is preserved, so spacing scales with the extent ratio.
  Spacing sp = v.spacing();
  for (int ax = 0; ax < 3; ++ax) {
    sp[ax] = sp[ax] * static_cast<double>(v.shape()[ax]) / static_cast<double>(target[ax]);
  }
  out.set_spacing(sp);
  return out;
}

Volume minmax_normalize(const Volume& v, double lo, double hi) {
  if (!(hi > lo)) throw ValueError("normalization target requires hi > lo");
  const double mn = v.min();
  const double mx = v.max();
  if (!(mx > mn)) throw ValueError("cannot min-max normalize a constant volume (zero dynamic range)");
  const double range = mx - mn;
  const double span = hi - lo;
  std::vector<float> out(v.data().size());
  // (x - mn) / range is exactly 0 at the minimum and exactly 1 at the maximum.
  std::transform(v.data().begin(), v.data().end(), out.begin(),
                 [&](float x) { return static_cast<float>(lo + span * ((x - mn) / range)); });
  Volume result = v.with_data(std::move(out));
  result.set_value_range(std::pair{lo, hi});
  return result;
}

Volume flip(const Volume& v, Axis axis) {
  const auto& s = v.shape();
  std::vector<float> out(v.data().size());
  std::size_t o = 0;
  for (std::int64_t i = 0; i < s.h; ++i) {
    for (std::int64_t j = 0; j < s.w; ++j) {
      for (std::int64_t k = 0; k < s.d; ++k) {
        const std::int64_t si = axis == Axis::Height ? s.h - 1 - i : i;
        const std::int64_t sj = axis == Axis::Width ? s.w - 1 - j : j;
        const std::int64_t sk = axis == Axis::Depth ? s.d - 1 - k : k;
        out[o++] = v.at(si, sj, sk);
      }
    }
  }
  return v.with_data(std::move(out));
}

Volume flip_augment(const Volume& v, Axis axis, double p, Rng& rng, bool* flipped) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValueError("flip probability must lie in [0, 1]");
  const bool f = bernoulli(rng, p);
  if (flipped != nullptr) *flipped = f;
  return f ? flip(v, axis) : v;
}

std::pair<Volume, Volume> split_lateral(const Volume& v) {
  const auto& s = v.shape();
  if (s.w < 2) throw ShapeError("lateral split needs width >= 2, got " + std::to_string(s.w));
  const std::int64_t left_w = s.w / 2;
  auto part = [&](std::int64_t begin, std::int64_t width) {
    std::vector<float> out(static_cast<std::size_t>(s.h * width * s.d));
    std::size_t o = 0;
    for (std::int64_t i = 0; i < s.h; ++i) {
      for (std::int64_t j = begin; j < begin + width; ++j) {
        for (std::int64_t k = 0; k < s.d; ++k) out[o++] = v.at(i, j, k);
      }
    }
    Volume p({s.h, width, s.d}, std::move(out), v.spacing(), v.modality());
    p.set_value_range(v.value_range());
    p.set_spacing_defaulted(v.spacing_defaulted());
    return p;
  };
  return {part(0, left_w), part(left_w, s.w - left_w)};
}

Volume concat_width(const Volume& left, const Volume& right) {
  const auto& a = left.shape();
  const auto& b = right.shape();
  if (a.h != b.h || a.d != b.d) throw ShapeError("width concatenation needs equal height and depth");
  const Shape3 out_shape{a.h, a.w + b.w, a.d};
  std::vector<float> out(static_cast<std::size_t>(out_shape.numel()));
  std::size_t o = 0;
  for (std::int64_t i = 0; i < a.h; ++i) {
    for (std::int64_t j = 0; j < out_shape.w; ++j) {
      for (std::int64_t k = 0; k < a.d; ++k) out[o++] = j < a.w ? left.at(i, j, k) : right.at(i, j - a.w, k);
    }
  }
  Volume result(out_shape, std::move(out), left.spacing(), left.modality());
  result.set_value_range(left.value_range());
  return result;
}

}  // namespace latentvol
