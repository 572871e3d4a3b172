#include "latentvol/volume.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <torch/torch.h>

#include "latentvol/errors.hpp"

namespace latentvol {

std::string_view to_string(Modality m) {
  return m == Modality::CT ? "CT" : "MRI";
}

Modality parse_modality(std::string_view s) {
  if (s == "MRI") return Modality::MRI;
  if (s == "CT") return Modality::CT;
  throw ValueError("unknown modality '" + std::string(s) + "' (expected MRI or CT)");
}

Axis parse_axis(std::string_view s) {
  if (s == "height" || s == "h" || s == "0") return Axis::Height;
  if (s == "width" || s == "w" || s == "1") return Axis::Width;
  if (s == "depth" || s == "d" || s == "2") return Axis::Depth;
  throw ValueError("unknown axis '" + std::string(s) + "' (expected height, width or depth)");
}

std::string Shape3::str() const {
  std::ostringstream os;
  os << h << "x" << w << "x" << d;
  return os.str();
}

Volume::Volume(Shape3 shape, std::vector<float> data, Spacing spacing, Modality modality)
    : shape_(shape), data_(std::move(data)), spacing_(spacing), modality_(modality) {
  if (shape_.h < 1 || shape_.w < 1 || shape_.d < 1) {
    throw ShapeError("volume extents must be >= 1, got " + shape_.str());
  }
  if (static_cast<std::int64_t>(data_.size()) != shape_.numel()) {
    throw ShapeError("volume data has " + std::to_string(data_.size()) + " values, shape " + shape_.str() +
                     " needs " + std::to_string(shape_.numel()));
  }
  set_spacing(spacing);
  check_finite();
}

Volume Volume::filled(Shape3 shape, float value, Spacing spacing, Modality modality) {
  if (shape.h < 1 || shape.w < 1 || shape.d < 1) {
    throw ShapeError("volume extents must be >= 1, got " + shape.str());
  }
  return Volume(shape, std::vector<float>(static_cast<std::size_t>(shape.numel()), value), spacing, modality);
}

void Volume::set_spacing(Spacing spacing) {
  for (const double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ValueError("voxel spacing components must be positive and finite");
  }
  spacing_ = spacing;
}

float Volume::min() const { return *std::min_element(data_.begin(), data_.end()); }
float Volume::max() const { return *std::max_element(data_.begin(), data_.end()); }

void Volume::check_finite() const {
  const auto bad = std::find_if(data_.begin(), data_.end(), [](float x) { return !std::isfinite(x); });
  if (bad != data_.end()) {
    throw ValueError("volume contains a non-finite value at flat index " + std::to_string(bad - data_.begin()));
  }
}

Volume Volume::with_data(std::vector<float> data) const {
  Volume out(shape_, std::move(data), spacing_, modality_);
  out.value_range_ = value_range_;
  out.spacing_defaulted_ = spacing_defaulted_;
  return out;
}

bool operator==(const Volume& a, const Volume& b) {
  return a.shape_ == b.shape_ && a.spacing_ == b.spacing_ && a.modality_ == b.modality_ && a.data_ == b.data_;
}

torch::Tensor to_tensor(const Volume& v) {
  const auto& s = v.shape();
  auto t = torch::empty({s.h, s.w, s.d}, torch::kFloat32);
  std::copy(v.data().begin(), v.data().end(), t.data_ptr<float>());
  return t;
}

Volume from_tensor(const torch::Tensor& t, Spacing spacing, Modality modality) {
  if (t.dim() != 3) throw ShapeError("expected a [H, W, D] tensor, got " + std::to_string(t.dim()) + " dims");
  const auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  const float* p = c.data_ptr<float>();
  std::vector<float> data(p, p + c.numel());
  return Volume({c.size(0), c.size(1), c.size(2)}, std::move(data), spacing, modality);
}

torch::Tensor stack_batch(std::span<const Volume> volumes) {
  if (volumes.empty()) throw ValueError("cannot stack an empty batch");
  std::vector<torch::Tensor> items;
  items.reserve(volumes.size());
  for (const auto& v : volumes) {
    if (v.shape() != volumes.front().shape()) {
      throw ShapeError("batch volumes differ in shape: " + v.shape().str() + " vs " + volumes.front().shape().str());
    }
    items.push_back(to_tensor(v).unsqueeze(0));
  }
  return torch::stack(items);
}

}  // namespace latentvol
