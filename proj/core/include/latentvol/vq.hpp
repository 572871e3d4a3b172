#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace latentvol::vq {

/// Per-axis ratio between image and latent resolution.
struct Compression {
  std::int64_t h = 4;
  std::int64_t w = 4;
  std::int64_t d = 4;

  [[nodiscard]] std::int64_t operator[](int axis) const { return axis == 0 ? h : axis == 1 ? w : d; }
  friend bool operator==(const Compression&, const Compression&) = default;
};

/// Encoder output or its quantized counterpart, laid out [N, k, h', w', d'].
struct LatentGrid {
  torch::Tensor data;
  bool quantized = false;
  Compression compression;
};

struct CodebookOptions {
  std::int64_t size = 16384;
  std::int64_t dim = 8;
  double decay = 0.99;
  double eps = 1e-5;
  std::uint64_t seed = 0;
  torch::Dtype dtype = torch::kFloat32;
};

/// Scalar extrema over every codebook entry.
struct Extrema {
  double min = 0.0;
  double max = 0.0;
};

/// K x d quantization vectors with exponential-moving-average accumulators.
///
/// The cluster-size accumulator starts at one and the embedding-sum
/// accumulator at the initial vectors, so an unused code keeps its vector
/// until its accumulators have decayed below the smoothing constant.
class Codebook {
 public:
  /// Uniform initialisation in [-1/K, 1/K] from a dedicated seeded generator.
  explicit Codebook(const CodebookOptions& options);
  Codebook(torch::Tensor vectors, double decay, double eps);
  Codebook(torch::Tensor vectors, torch::Tensor cluster_size, torch::Tensor embed_sum, double decay, double eps);

  [[nodiscard]] std::int64_t size() const { return vectors_.size(0); }
  [[nodiscard]] std::int64_t dim() const { return vectors_.size(1); }
  [[nodiscard]] double decay() const { return decay_; }
  [[nodiscard]] double eps() const { return eps_; }
  [[nodiscard]] const torch::Tensor& vectors() const { return vectors_; }
  [[nodiscard]] const torch::Tensor& ema_cluster_size() const { return cluster_size_; }
  [[nodiscard]] const torch::Tensor& ema_embed_sum() const { return embed_sum_; }

  /// One EMA step; latents [M, d], assignments [M] (int64 indices).
  void update_ema(const torch::Tensor& latents, const torch::Tensor& assignments);

  [[nodiscard]] Codebook clone() const;

 private:
  void check_state() const;

  torch::Tensor vectors_;
  torch::Tensor cluster_size_;
  torch::Tensor embed_sum_;
  double decay_;
  double eps_;
};

/// Index of the row with the smallest squared Euclidean distance; ties go to the smallest index.
std::int64_t nearest_code(const torch::Tensor& vec, const Codebook& cb);

/// Vectorised nearest_code for [M, d] inputs, returning [M] int64 indices.
torch::Tensor assign_codes(const torch::Tensor& vecs, const Codebook& cb);

struct QuantizeResult {
  torch::Tensor indices;  // [N, h', w', d'] int64
  LatentGrid quantized;   // exact codebook rows, no gradient
  torch::Tensor commit_loss;  // mean (z - e)^2, differentiable in z only
};

/// Replaces every site vector with its nearest code. Throws ShapeError when
/// the channel count differs from the codebook dimension and ValueError when
/// the grid is already quantized.
QuantizeResult quantize(const LatentGrid& latents, const Codebook& cb);

/// Looks up codes for an index grid [N, h', w', d'] and returns [N, d, h', w', d'].
torch::Tensor lookup(const torch::Tensor& indices, const Codebook& cb);

/// Forward value is exactly `quantized`; the backward pass hands the incoming
/// gradient to `unquantized` unchanged.
torch::Tensor straight_through(const torch::Tensor& unquantized, const torch::Tensor& quantized);

/// Free-function form of Codebook::update_ema that leaves `cb` untouched.
Codebook ema_update(const Codebook& cb, const torch::Tensor& latents, const torch::Tensor& assignments);

/// Throws ValueError for a degenerate codebook (min == max) or non-finite entries.
Extrema codebook_extrema(const Codebook& cb);

/// 2 (z - min) / (max - min) - 1, elementwise.
torch::Tensor latent_normalize(const torch::Tensor& z, const Extrema& ex);

/// Exact affine inverse of latent_normalize.
torch::Tensor latent_denormalize(const torch::Tensor& z_norm, const Extrema& ex);

/// Fraction of entries with |z_norm| > 1 (training diagnostic).
double overflow_fraction(const torch::Tensor& z_norm);

/// [N, k, h, w, d] -> [N*h*w*d, k] site vectors, and back.
torch::Tensor sites_to_rows(const torch::Tensor& grid);
torch::Tensor rows_to_sites(const torch::Tensor& rows, const torch::IntArrayRef& grid_shape);

}  // namespace latentvol::vq
