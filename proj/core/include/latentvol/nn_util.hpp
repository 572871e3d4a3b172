#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace latentvol {

/// Largest group count <= max_groups that divides `channels`.
std::int64_t norm_groups(std::int64_t channels, std::int64_t max_groups = 8);

/// FNV-1a digest over the raw bytes of every named parameter (and buffer), in
/// registration order. Two modules have equal fingerprints iff their weights
/// are bit-identical (up to hash collisions).
std::uint64_t parameter_fingerprint(const torch::nn::Module& module);

/// Named parameters of `module` as detached clones, keyed by name.
std::vector<std::pair<std::string, torch::Tensor>> snapshot_parameters(const torch::nn::Module& module);

/// Copies tensors into `module`'s parameters and buffers by name. Throws
/// FormatError for a missing name or a shape mismatch.
void load_parameters(torch::nn::Module& module, const std::vector<std::pair<std::string, torch::Tensor>>& tensors);

void set_requires_grad(torch::nn::Module& module, bool flag);

/// Throws NumericError naming `what` when the scalar is NaN or infinite.
void require_finite(const torch::Tensor& value, const std::string& what);

}  // namespace latentvol
