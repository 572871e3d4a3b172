#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <torch/types.h>

namespace latentvol {

enum class Modality { MRI, CT };

std::string_view to_string(Modality m);
Modality parse_modality(std::string_view s);

enum class Axis { Height = 0, Width = 1, Depth = 2 };

Axis parse_axis(std::string_view s);

/// Grid extent as (height, width, depth).
struct Shape3 {
  std::int64_t h = 1;
  std::int64_t w = 1;
  std::int64_t d = 1;

  [[nodiscard]] std::int64_t numel() const { return h * w * d; }
  [[nodiscard]] std::int64_t operator[](int axis) const { return axis == 0 ? h : axis == 1 ? w : d; }
  [[nodiscard]] std::int64_t& operator[](int axis) { return axis == 0 ? h : axis == 1 ? w : d; }
  [[nodiscard]] std::string str() const;

  friend auto operator<=>(const Shape3&, const Shape3&) = default;
};

/// Millimetres per voxel along (height, width, depth).
using Spacing = std::array<double, 3>;

/// A 3D scalar grid in H-major, then W, then D order (depth varies fastest).
///
/// Construction validates the invariants: positive extents, positive spacing
/// and finite intensities. Element access is unchecked.
class Volume {
 public:
  Volume(Shape3 shape, std::vector<float> data, Spacing spacing = {1.0, 1.0, 1.0},
         Modality modality = Modality::MRI);

  static Volume filled(Shape3 shape, float value, Spacing spacing = {1.0, 1.0, 1.0},
                       Modality modality = Modality::MRI);

  [[nodiscard]] const Shape3& shape() const { return shape_; }
  [[nodiscard]] const Spacing& spacing() const { return spacing_; }
  [[nodiscard]] Modality modality() const { return modality_; }
  [[nodiscard]] std::int64_t numel() const { return shape_.numel(); }

  /// Range the values were last normalized to, if any.
  [[nodiscard]] const std::optional<std::pair<double, double>>& value_range() const { return value_range_; }
  /// True when the spacing was not present in the source file and (1,1,1) was assumed.
  [[nodiscard]] bool spacing_defaulted() const { return spacing_defaulted_; }

  void set_spacing(Spacing spacing);
  void set_modality(Modality m) { modality_ = m; }
  void set_value_range(std::optional<std::pair<double, double>> r) { value_range_ = r; }
  void set_spacing_defaulted(bool v) { spacing_defaulted_ = v; }

  [[nodiscard]] std::span<const float> data() const { return data_; }
  [[nodiscard]] std::span<float> data() { return data_; }

  [[nodiscard]] std::int64_t index(std::int64_t h, std::int64_t w, std::int64_t d) const {
    return (h * shape_.w + w) * shape_.d + d;
  }
  [[nodiscard]] float at(std::int64_t h, std::int64_t w, std::int64_t d) const { return data_[index(h, w, d)]; }
  [[nodiscard]] float& at(std::int64_t h, std::int64_t w, std::int64_t d) { return data_[index(h, w, d)]; }

  [[nodiscard]] float min() const;
  [[nodiscard]] float max() const;

  /// Throws ValueError if any intensity is NaN or infinite.
  void check_finite() const;

  /// Copy with the same metadata and new intensities (shape must match).
  [[nodiscard]] Volume with_data(std::vector<float> data) const;

  friend bool operator==(const Volume& a, const Volume& b);

 private:
  Shape3 shape_;
  std::vector<float> data_;
  Spacing spacing_;
  Modality modality_;
  std::optional<std::pair<double, double>> value_range_;
  bool spacing_defaulted_ = false;
};

/// The volume as a contiguous float tensor of shape [H, W, D].
torch::Tensor to_tensor(const Volume& v);

/// Inverse of to_tensor; accepts any [H, W, D] tensor (copied to float32).
Volume from_tensor(const torch::Tensor& t, Spacing spacing = {1.0, 1.0, 1.0},
                   Modality modality = Modality::MRI);

/// Stacks equally shaped volumes into a [N, 1, H, W, D] batch.
torch::Tensor stack_batch(std::span<const Volume> volumes);

}  // namespace latentvol
