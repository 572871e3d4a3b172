#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "latentvol/manifest.hpp"
#include "latentvol/phantom.hpp"
#include "latentvol/volume.hpp"
#include "latentvol/volume_io.hpp"

namespace latentvol::fixtures {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("latentvol-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Volume phantom(std::uint64_t seed, Shape3 shape = {16, 16, 8}) {
  PhantomSpec spec;
  spec.seed = seed;
  spec.shape = shape;
  return generate_phantom(spec).volume;
}

inline std::vector<Volume> phantoms(std::size_t n, std::uint64_t first_seed = 0, Shape3 shape = {16, 16, 8}) {
  std::vector<Volume> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(phantom(first_seed + i, shape));
  return out;
}

/// Saves the volumes and returns a manifest with every record in "train".
inline DatasetManifest write_train_manifest(const std::filesystem::path& dir, const std::vector<Volume>& volumes) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestRecord> records;
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    const auto stem = "vol_" + std::to_string(i);
    const auto p = save_volume(volumes[i], dir / stem);
    records.push_back({p.filename().string(), "patient-" + std::to_string(i), "train", std::nullopt});
  }
  DatasetManifest m(dir, records);
  m.save(dir / "manifest.jsonl");
  return m;
}

/// Volume with value f(h, w, d) at every voxel.
template <typename F>
Volume volume_from(Shape3 shape, F f, Spacing spacing = {1.0, 1.0, 1.0}) {
  std::vector<float> data(static_cast<std::size_t>(shape.numel()));
  for (std::int64_t h = 0; h < shape.h; ++h)
    for (std::int64_t w = 0; w < shape.w; ++w)
      for (std::int64_t d = 0; d < shape.d; ++d)
        data[static_cast<std::size_t>((h * shape.w + w) * shape.d + d)] = static_cast<float>(f(h, w, d));
  return Volume(shape, std::move(data), spacing);
}

}  // namespace latentvol::fixtures
