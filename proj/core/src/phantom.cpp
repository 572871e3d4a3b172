#include "latentvol/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "latentvol/errors.hpp"
#include "latentvol/random.hpp"

namespace latentvol {

void PhantomSpec::validate() const {
  if (shape.h < 4 || shape.w < 4 || shape.d < 4) throw ValueError("phantom extents must be >= 4, got " + shape.str());
  if (n_ellipsoids < 1) throw ValueError("phantom needs at least one ellipsoid");
  if (intensity_bands.empty()) throw ValueError("phantom needs at least one intensity band");
  for (const auto& [lo, hi] : intensity_bands) {
    if (lo < -1.0 || hi > 1.0 || lo > hi) throw ValueError("intensity bands must satisfy -1 <= lo <= hi <= 1");
  }
  if (background < -1.0 || background > 1.0) throw ValueError("phantom background must lie in [-1, 1]");
  if (noise_sigma < 0.0) throw ValueError("phantom noise sigma must be >= 0");
}

double Ellipsoid::level(double h, double w, double d) const {
  const double a = (h - center[0]) / radii[0];
  const double b = (w - center[1]) / radii[1];
  const double c = (d - center[2]) / radii[2];
  return a * a + b * b + c * c;
}

Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "phantom"));
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };

  std::vector<Ellipsoid> ellipsoids;
  ellipsoids.reserve(static_cast<std::size_t>(spec.n_ellipsoids));
  for (int e = 0; e < spec.n_ellipsoids; ++e) {
    Ellipsoid el;
    for (int ax = 0; ax < 3; ++ax) {
      const double n = static_cast<double>(spec.shape[ax]);
      el.center[ax] = uniform(0.3 * (n - 1.0), 0.7 * (n - 1.0));
      // A radius of at least one voxel keeps the voxel nearest the centre inside.
      el.radii[ax] = std::max(1.0, uniform(0.15 * n, 0.35 * n));
    }
    const auto& band = spec.intensity_bands[static_cast<std::size_t>(e) % spec.intensity_bands.size()];
    el.intensity = uniform(band.first, band.second);
    ellipsoids.push_back(el);
  }

  const auto& s = spec.shape;
  std::vector<float> data(static_cast<std::size_t>(s.numel()), static_cast<float>(spec.background));
  std::vector<float> mask(static_cast<std::size_t>(s.numel()), 0.0F);
  std::size_t o = 0;
  for (std::int64_t i = 0; i < s.h; ++i) {
    for (std::int64_t j = 0; j < s.w; ++j) {
      for (std::int64_t k = 0; k < s.d; ++k, ++o) {
        for (const auto& el : ellipsoids) {
          const double lvl = el.level(static_cast<double>(i), static_cast<double>(j), static_cast<double>(k));
          if (lvl <= 1.0) {
            // Later ellipsoids paint over earlier ones; a mild radial shading gives texture.
            data[o] = static_cast<float>(std::clamp(el.intensity - 0.1 * lvl, -1.0, 1.0));
            mask[o] = 1.0F;
          }
        }
      }
    }
  }
  if (spec.noise_sigma > 0.0) {
    for (auto& x : data) {
      // Box-Muller on the phantom's own stream.
      const double u1 = 1.0 - uniform01(rng);
      const double u2 = uniform01(rng);
      const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
      x = static_cast<float>(std::clamp(x + spec.noise_sigma * z, -1.0, 1.0));
    }
  }
  Volume volume(s, std::move(data));
  Volume mask_volume(s, std::move(mask));
  return {std::move(volume), std::move(mask_volume), std::move(ellipsoids)};
}

}  // namespace latentvol
