#include "latentvol/nn_util.hpp"

#include <map>

#include "latentvol/errors.hpp"

namespace latentvol {

std::int64_t norm_groups(std::int64_t channels, std::int64_t max_groups) {
  std::int64_t g = std::min(max_groups, channels);
  while (g > 1 && channels % g != 0) --g;
  return std::max<std::int64_t>(g, 1);
}

std::uint64_t parameter_fingerprint(const torch::nn::Module& module) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&h](const torch::Tensor& t) {
    const auto c = t.detach().contiguous();
    const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
    const auto n = static_cast<std::size_t>(c.numel()) * c.element_size();
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001B3ULL;
    }
  };
  for (const auto& p : module.named_parameters()) mix(p.value());
  for (const auto& b : module.named_buffers()) mix(b.value());
  return h;
}

std::vector<std::pair<std::string, torch::Tensor>> snapshot_parameters(const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : module.named_parameters()) out.emplace_back(p.key(), p.value().detach().clone());
  for (const auto& b : module.named_buffers()) out.emplace_back(b.key(), b.value().detach().clone());
  return out;
}

void load_parameters(torch::nn::Module& module, const std::vector<std::pair<std::string, torch::Tensor>>& tensors) {
  std::map<std::string, torch::Tensor> by_name(tensors.begin(), tensors.end());
  torch::NoGradGuard no_grad;
  auto copy_into = [&](const std::string& name, torch::Tensor& dst) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("missing weight '" + name + "'");
    if (it->second.sizes() != dst.sizes()) throw FormatError("weight '" + name + "' has mismatched shape");
    dst.copy_(it->second);
  };
  for (auto& p : module.named_parameters()) copy_into(p.key(), p.value());
  for (auto& b : module.named_buffers()) copy_into(b.key(), b.value());
}

void set_requires_grad(torch::nn::Module& module, bool flag) {
  for (auto& p : module.parameters()) p.set_requires_grad(flag);
}

void require_finite(const torch::Tensor& value, const std::string& what) {
  if (!torch::isfinite(value).all().item<bool>()) throw NumericError("non-finite " + what);
}

}  // namespace latentvol
