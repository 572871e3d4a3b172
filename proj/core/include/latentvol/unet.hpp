#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "latentvol/ddpm.hpp"

namespace latentvol::ddpm {

/// In-plane convolution: 3x3x1 kernel, so output depth slice k depends only on input slice k.
class FactorizedConvImpl : public torch::nn::Module {
 public:
  FactorizedConvImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t stride = 1);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Conv3d& conv() { return conv_; }

 private:
  torch::nn::Conv3d conv_{nullptr};
};
TORCH_MODULE(FactorizedConv);

/// Pre-norm multi-head self-attention with a residual connection, applied to
/// token sequences [B, L, C]. Normalization is per token, so batch entries
/// never interact.
class TokenAttentionImpl : public torch::nn::Module {
 public:
  TokenAttentionImpl(std::int64_t channels, std::int64_t heads);
  torch::Tensor forward(const torch::Tensor& tokens);

  torch::nn::LayerNorm& norm() { return norm_; }
  torch::nn::Linear& qkv() { return qkv_; }
  torch::nn::Linear& proj() { return proj_; }
  [[nodiscard]] std::int64_t heads() const { return heads_; }

 private:
  std::int64_t heads_;
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear qkv_{nullptr};
  torch::nn::Linear proj_{nullptr};
};
TORCH_MODULE(TokenAttention);

/// Attention over the H x W positions of each depth slice (depth joins the batch).
class SpatialAttentionImpl : public torch::nn::Module {
 public:
  SpatialAttentionImpl(std::int64_t channels, std::int64_t heads = 1);
  /// x: [N, C, H, W, D].
  torch::Tensor forward(const torch::Tensor& x);
  TokenAttention& attention() { return attn_; }

 private:
  TokenAttention attn_{nullptr};
};
TORCH_MODULE(SpatialAttention);

/// Attention along depth at each (h, w) site (the image-plane axes join the batch).
class DepthAttentionImpl : public torch::nn::Module {
 public:
  DepthAttentionImpl(std::int64_t channels, std::int64_t heads = 1);
  torch::Tensor forward(const torch::Tensor& x);
  TokenAttention& attention() { return attn_; }

 private:
  TokenAttention attn_{nullptr};
};
TORCH_MODULE(DepthAttention);

/// Residual block with factorized convolutions and an additive timestep projection.
class TimeResBlockImpl : public torch::nn::Module {
 public:
  TimeResBlockImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t temb_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  FactorizedConv conv1_{nullptr}, conv2_{nullptr};
  torch::nn::Linear temb_proj_{nullptr};
  torch::nn::Conv3d skip_{nullptr};
};
TORCH_MODULE(TimeResBlock);

struct UNetOptions {
  std::int64_t in_channels = 8;
  std::int64_t base_channels = 32;
  std::vector<std::int64_t> channel_mult{1, 2, 2};
  std::int64_t res_blocks = 1;
  std::int64_t heads = 1;
  /// Spatial+depth attention pairs are placed at this many lowest-resolution levels.
  std::int64_t attention_levels = 2;
};

/// eps-prediction U-Net over latent grids [N, C, H, W, D]. Downsampling is
/// in-plane only (stride 2x2x1), so H and W must be divisible by
/// 2^(levels - 1) while D is unconstrained.
class UNet3dImpl : public torch::nn::Module {
 public:
  explicit UNet3dImpl(const UNetOptions& options);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t);
  [[nodiscard]] const UNetOptions& options() const { return options_; }

 private:
  struct Level {
    std::vector<TimeResBlock> blocks;
    std::vector<SpatialAttention> spatial;
    std::vector<DepthAttention> depth;
    FactorizedConv resample{nullptr};
  };

  UNetOptions options_;
  torch::nn::Linear temb1_{nullptr}, temb2_{nullptr};
  FactorizedConv conv_in_{nullptr};
  std::vector<Level> down_;
  TimeResBlock mid1_{nullptr}, mid2_{nullptr};
  SpatialAttention mid_spatial_{nullptr};
  DepthAttention mid_depth_{nullptr};
  std::vector<Level> up_;
  torch::nn::GroupNorm norm_out_{nullptr};
  FactorizedConv conv_out_{nullptr};
};
TORCH_MODULE(UNet3d);

/// Wraps a U-Net as a NoisePredictor (the module is shared, not copied).
NoisePredictor as_predictor(UNet3d net);

}  // namespace latentvol::ddpm
