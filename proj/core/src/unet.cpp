#include "latentvol/unet.hpp"

#include <cmath>

#include "latentvol/errors.hpp"
#include "latentvol/nn_util.hpp"

namespace latentvol::ddpm {
namespace F = torch::nn::functional;

FactorizedConvImpl::FactorizedConvImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t stride) {
  conv_ = register_module("conv", torch::nn::Conv3d(torch::nn::Conv3dOptions(in_ch, out_ch, {3, 3, 1})
                                                        .stride({stride, stride, 1})
                                                        .padding({1, 1, 0})));
}

torch::Tensor FactorizedConvImpl::forward(const torch::Tensor& x) { return conv_->forward(x); }

TokenAttentionImpl::TokenAttentionImpl(std::int64_t channels, std::int64_t heads) : heads_(heads) {
  if (heads < 1 || channels % heads != 0) throw ConfigError("attention channels must be divisible by the head count");
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
  qkv_ = register_module("qkv", torch::nn::Linear(channels, 3 * channels));
  proj_ = register_module("proj", torch::nn::Linear(channels, channels));
}

torch::Tensor TokenAttentionImpl::forward(const torch::Tensor& tokens) {
  const auto B = tokens.size(0);
  const auto L = tokens.size(1);
  const auto C = tokens.size(2);
  const auto dh = C / heads_;
  const auto qkv = qkv_->forward(norm_->forward(tokens)).reshape({B, L, 3, heads_, dh}).permute({2, 0, 3, 1, 4});
  const auto q = qkv[0];
  const auto k = qkv[1];
  const auto v = qkv[2];
  const auto weights = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh)), -1);
  const auto out = torch::matmul(weights, v).permute({0, 2, 1, 3}).reshape({B, L, C});
  return tokens + proj_->forward(out);
}

SpatialAttentionImpl::SpatialAttentionImpl(std::int64_t channels, std::int64_t heads) {
  attn_ = register_module("attn", TokenAttention(channels, heads));
}

torch::Tensor SpatialAttentionImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 5) throw ShapeError("spatial attention expects [N, C, H, W, D]");
  const auto N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3), D = x.size(4);
  const auto tokens = x.permute({0, 4, 2, 3, 1}).reshape({N * D, H * W, C});
  return attn_->forward(tokens).reshape({N, D, H, W, C}).permute({0, 4, 2, 3, 1}).contiguous();
}

DepthAttentionImpl::DepthAttentionImpl(std::int64_t channels, std::int64_t heads) {
  attn_ = register_module("attn", TokenAttention(channels, heads));
}

torch::Tensor DepthAttentionImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 5) throw ShapeError("depth attention expects [N, C, H, W, D]");
  const auto N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3), D = x.size(4);
  const auto tokens = x.permute({0, 2, 3, 4, 1}).reshape({N * H * W, D, C});
  return attn_->forward(tokens).reshape({N, H, W, D, C}).permute({0, 4, 1, 2, 3}).contiguous();
}

TimeResBlockImpl::TimeResBlockImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t temb_dim) {
  norm1_ = register_module("norm1", torch::nn::GroupNorm(norm_groups(in_ch), in_ch));
  conv1_ = register_module("conv1", FactorizedConv(in_ch, out_ch));
  temb_proj_ = register_module("temb_proj", torch::nn::Linear(temb_dim, out_ch));
  norm2_ = register_module("norm2", torch::nn::GroupNorm(norm_groups(out_ch), out_ch));
  conv2_ = register_module("conv2", FactorizedConv(out_ch, out_ch));
  if (in_ch != out_ch) {
    skip_ = register_module("skip", torch::nn::Conv3d(torch::nn::Conv3dOptions(in_ch, out_ch, 1)));
  }
}

torch::Tensor TimeResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  auto h = conv1_->forward(F::silu(norm1_->forward(x)));
  h = h + temb_proj_->forward(F::silu(temb)).reshape({temb.size(0), -1, 1, 1, 1});
  h = conv2_->forward(F::silu(norm2_->forward(h)));
  return (skip_ ? skip_->forward(x) : x) + h;
}

UNet3dImpl::UNet3dImpl(const UNetOptions& o) : options_(o) {
  if (o.channel_mult.empty()) throw ConfigError("U-Net needs at least one resolution level");
  const auto levels = static_cast<std::int64_t>(o.channel_mult.size());
  const std::int64_t temb_dim = 4 * o.base_channels;
  temb1_ = register_module("temb1", torch::nn::Linear(o.base_channels, temb_dim));
  temb2_ = register_module("temb2", torch::nn::Linear(temb_dim, temb_dim));
  conv_in_ = register_module("conv_in", FactorizedConv(o.in_channels, o.base_channels));

  auto has_attention = [&](std::int64_t level) { return level >= levels - o.attention_levels; };
  std::vector<std::int64_t> skip_ch{o.base_channels};
  std::int64_t ch = o.base_channels;
  for (std::int64_t l = 0; l < levels; ++l) {
    Level level;
    const std::int64_t out = o.base_channels * o.channel_mult[static_cast<std::size_t>(l)];
    const std::string p = "down" + std::to_string(l) + "_";
    for (std::int64_t b = 0; b < o.res_blocks; ++b) {
      level.blocks.push_back(register_module(p + "block" + std::to_string(b), TimeResBlock(ch, out, temb_dim)));
      ch = out;
      if (has_attention(l)) {
        level.spatial.push_back(register_module(p + "spatial" + std::to_string(b), SpatialAttention(ch, o.heads)));
        level.depth.push_back(register_module(p + "depth" + std::to_string(b), DepthAttention(ch, o.heads)));
      }
      skip_ch.push_back(ch);
    }
    if (l != levels - 1) {
      level.resample = register_module(p + "downsample", FactorizedConv(ch, ch, 2));
      skip_ch.push_back(ch);
    }
    down_.push_back(std::move(level));
  }
  mid1_ = register_module("mid1", TimeResBlock(ch, ch, temb_dim));
  mid_spatial_ = register_module("mid_spatial", SpatialAttention(ch, o.heads));
  mid_depth_ = register_module("mid_depth", DepthAttention(ch, o.heads));
  mid2_ = register_module("mid2", TimeResBlock(ch, ch, temb_dim));

  for (std::int64_t l = levels - 1; l >= 0; --l) {
    Level level;
    const std::int64_t out = o.base_channels * o.channel_mult[static_cast<std::size_t>(l)];
    const std::string p = "up" + std::to_string(l) + "_";
    for (std::int64_t b = 0; b <= o.res_blocks; ++b) {
      const std::int64_t skip = skip_ch.back();
      skip_ch.pop_back();
      level.blocks.push_back(register_module(p + "block" + std::to_string(b), TimeResBlock(ch + skip, out, temb_dim)));
      ch = out;
      if (has_attention(l)) {
        level.spatial.push_back(register_module(p + "spatial" + std::to_string(b), SpatialAttention(ch, o.heads)));
        level.depth.push_back(register_module(p + "depth" + std::to_string(b), DepthAttention(ch, o.heads)));
      }
    }
    if (l != 0) level.resample = register_module(p + "upsample", FactorizedConv(ch, ch));
    up_.push_back(std::move(level));
  }
  norm_out_ = register_module("norm_out", torch::nn::GroupNorm(norm_groups(ch), ch));
  conv_out_ = register_module("conv_out", FactorizedConv(ch, o.in_channels));
}

torch::Tensor UNet3dImpl::forward(const torch::Tensor& x, const torch::Tensor& t) {
  if (x.dim() != 5 || x.size(1) != options_.in_channels) {
    throw ShapeError("U-Net input must be [N, " + std::to_string(options_.in_channels) + ", H, W, D]");
  }
  const std::int64_t factor = std::int64_t{1} << (options_.channel_mult.size() - 1);
  if (x.size(2) % factor != 0 || x.size(3) % factor != 0) {
    throw ShapeError("U-Net in-plane extents must be divisible by " + std::to_string(factor));
  }
  auto temb = timestep_embedding(t, options_.base_channels).to(x.dtype());
  temb = temb2_->forward(F::silu(temb1_->forward(temb)));

  std::vector<torch::Tensor> skips;
  auto h = conv_in_->forward(x);
  skips.push_back(h);
  for (auto& level : down_) {
    for (std::size_t b = 0; b < level.blocks.size(); ++b) {
      h = level.blocks[b]->forward(h, temb);
      if (!level.spatial.empty()) h = level.depth[b]->forward(level.spatial[b]->forward(h));
      skips.push_back(h);
    }
    if (level.resample) {
      h = level.resample->forward(h);
      skips.push_back(h);
    }
  }
  h = mid1_->forward(h, temb);
  h = mid_depth_->forward(mid_spatial_->forward(h));
  h = mid2_->forward(h, temb);
  for (auto& level : up_) {
    for (std::size_t b = 0; b < level.blocks.size(); ++b) {
      h = level.blocks[b]->forward(torch::cat({h, skips.back()}, 1), temb);
      skips.pop_back();
      if (!level.spatial.empty()) h = level.depth[b]->forward(level.spatial[b]->forward(h));
    }
    if (level.resample) {
      h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0, 1.0}).mode(torch::kNearest));
      h = level.resample->forward(h);
    }
  }
  return conv_out_->forward(F::silu(norm_out_->forward(h)));
}

NoisePredictor as_predictor(UNet3d net) {
  return [net](const torch::Tensor& x, const torch::Tensor& t) mutable { return net->forward(x, t); };
}

}  // namespace latentvol::ddpm
