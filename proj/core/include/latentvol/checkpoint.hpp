#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

namespace latentvol::pipeline {

/// Single-file container:
///
///   "LVCKPT01" | u64 header length | header JSON |
///   u64 section count | sections...
///
/// and each section is
///
///   u32 name length | name | u8 dtype | u32 ndim | i64 dims[ndim] | u64 nbytes | payload
///
/// with all integers and payloads little-endian. The header JSON is written in
/// canonical (sorted-key) form, so load followed by save reproduces the bytes.
struct Checkpoint {
  std::string stage;  // "vqgan" or "diffusion"
  std::int64_t iteration = 0;
  nlohmann::json config = nlohmann::json::object();
  std::string config_hash;
  /// Stage-specific metadata (rng scheme, codebook extrema, parent hashes, ...).
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> sections;

  /// Appends a contiguous CPU copy. Throws ValueError on a duplicate name.
  void add(const std::string& name, const torch::Tensor& t);
  [[nodiscard]] bool has(const std::string& name) const;
  /// Throws FormatError when the section is missing.
  [[nodiscard]] const torch::Tensor& get(const std::string& name) const;
  /// Sections whose names start with `prefix`, with the prefix stripped.
  [[nodiscard]] std::vector<std::pair<std::string, torch::Tensor>> with_prefix(const std::string& prefix) const;
};

std::string serialize(const Checkpoint& ckpt);
/// Throws FormatError on a bad magic, truncation or unsupported dtype.
Checkpoint deserialize(const std::string& bytes);

/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file);
/// Throws IoError when the file cannot be read.
Checkpoint load_checkpoint(const std::filesystem::path& file);

}  // namespace latentvol::pipeline
