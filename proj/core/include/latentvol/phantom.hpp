#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "latentvol/volume.hpp"

namespace latentvol {

/// Parameters of a procedural ellipsoid-composite phantom.
struct PhantomSpec {
  std::uint64_t seed = 0;
  Shape3 shape{16, 16, 8};
  int n_ellipsoids = 3;
  /// Interior intensity ranges; ellipsoid i draws from band i % size.
  std::vector<std::pair<double, double>> intensity_bands{{0.2, 0.9}, {-0.4, 0.3}};
  double background = -1.0;
  /// Standard deviation of additive Gaussian noise (clamped to [-1, 1] afterwards).
  double noise_sigma = 0.0;

  /// Throws ValueError unless extents >= 4, n_ellipsoids >= 1 and all bands lie in [-1, 1].
  void validate() const;
};

/// Axis-aligned ellipsoid in voxel coordinates.
struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> radii{};
  double intensity = 0.0;

  /// Sum over axes of ((x - c) / r)^2 at voxel (h, w, d).
  [[nodiscard]] double level(double h, double w, double d) const;
  [[nodiscard]] bool contains(double h, double w, double d) const { return level(h, w, d) <= 1.0; }
};

struct Phantom {
  Volume volume;
  /// 1 inside the union of the ellipsoids, 0 elsewhere.
  Volume mask;
  std::vector<Ellipsoid> ellipsoids;
};

/// Deterministic in spec.seed. Values lie in [-1, 1] and the mask is never empty.
Phantom generate_phantom(const PhantomSpec& spec);

}  // namespace latentvol
