#include "latentvol/vqgan.hpp"

#include <algorithm>
#include <cmath>

#include "latentvol/errors.hpp"
#include "latentvol/nn_util.hpp"

namespace latentvol::vqgan {
namespace F = torch::nn::functional;

namespace {

std::int64_t log2_exact(std::int64_t v, const char* axis) {
  if (v < 1 || (v & (v - 1)) != 0) {
    throw ConfigError(std::string("compression factor along ") + axis + " must be a power of two, got " +
                      std::to_string(v));
  }
  std::int64_t n = 0;
  while ((std::int64_t{1} << n) < v) ++n;
  return n;
}

std::int64_t stage_channels(const VqGanOptions& o, std::size_t stage) {
  const auto& m = o.channel_mult;
  return o.base_channels * (m.empty() ? 1 : m[std::min(stage, m.size() - 1)]);
}

torch::nn::Conv3d conv3(std::int64_t in, std::int64_t out, torch::ExpandingArray<3> stride = 1) {
  return torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::GroupNorm group_norm(std::int64_t ch) {
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(norm_groups(ch), ch));
}

}  // namespace

StrideSchedule stride_schedule(const vq::Compression& c) {
  const std::array<std::int64_t, 3> n{log2_exact(c.h, "height"), log2_exact(c.w, "width"), log2_exact(c.d, "depth")};
  const std::int64_t stages = std::max({n[0], n[1], n[2]});
  StrideSchedule s;
  for (std::int64_t i = 0; i < stages; ++i) {
    s.strides.push_back({i < n[0] ? 2 : 1, i < n[1] ? 2 : 1, i < n[2] ? 2 : 1});
  }
  return s;
}

ResBlock3dImpl::ResBlock3dImpl(std::int64_t in_ch, std::int64_t out_ch) {
  norm1_ = register_module("norm1", group_norm(in_ch));
  conv1_ = register_module("conv1", conv3(in_ch, out_ch));
  norm2_ = register_module("norm2", group_norm(out_ch));
  conv2_ = register_module("conv2", conv3(out_ch, out_ch));
  if (in_ch != out_ch) {
    skip_ = register_module("skip", torch::nn::Conv3d(torch::nn::Conv3dOptions(in_ch, out_ch, 1)));
  }
}

torch::Tensor ResBlock3dImpl::forward(const torch::Tensor& x) {
  auto h = conv1_->forward(F::silu(norm1_->forward(x)));
  h = conv2_->forward(F::silu(norm2_->forward(h)));
  return (skip_ ? skip_->forward(x) : x) + h;
}

EncoderImpl::EncoderImpl(const VqGanOptions& o) {
  const auto schedule = stride_schedule(o.compression);
  std::int64_t ch = stage_channels(o, 0);
  conv_in_ = register_module("conv_in", conv3(1, ch));
  for (std::size_t i = 0; i < schedule.strides.size(); ++i) {
    const std::int64_t out = stage_channels(o, i);
    for (std::int64_t b = 0; b < o.res_blocks; ++b) {
      body_->push_back(ResBlock3d(b == 0 ? ch : out, out));
    }
    const auto& st = schedule.strides[i];
    body_->push_back(conv3(out, out, {st[0], st[1], st[2]}));
    ch = out;
  }
  body_->push_back(ResBlock3d(ch, ch));
  body_ = register_module("body", body_);
  norm_out_ = register_module("norm_out", group_norm(ch));
  conv_out_ = register_module("conv_out", conv3(ch, o.codebook.dim));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) {
  auto h = body_->forward(conv_in_->forward(x));
  return conv_out_->forward(F::silu(norm_out_->forward(h)));
}

DecoderImpl::DecoderImpl(const VqGanOptions& o) {
  const auto schedule = stride_schedule(o.compression);
  const std::size_t n = schedule.strides.size();
  std::int64_t ch = stage_channels(o, n == 0 ? 0 : n - 1);
  conv_in_ = register_module("conv_in", conv3(o.codebook.dim, ch));
  mid_ = register_module("mid", ResBlock3d(ch, ch));
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = n - 1 - r;
    const auto& st = schedule.strides[i];
    const std::int64_t out = stage_channels(o, i);
    Stage stage;
    stage.scale = {static_cast<double>(st[0]), static_cast<double>(st[1]), static_cast<double>(st[2])};
    stage.conv = register_module("up" + std::to_string(r) + "_conv", conv3(ch, out));
    for (std::int64_t b = 0; b < o.res_blocks; ++b) {
      stage.blocks.push_back(register_module("up" + std::to_string(r) + "_block" + std::to_string(b), ResBlock3d(out, out)));
    }
    stages_.push_back(std::move(stage));
    ch = out;
  }
  norm_out_ = register_module("norm_out", group_norm(ch));
  conv_out_ = register_module("conv_out", conv3(ch, 1));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& z) {
  auto h = mid_->forward(conv_in_->forward(z));
  for (auto& stage : stages_) {
    h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(stage.scale).mode(torch::kNearest));
    h = stage.conv->forward(h);
    for (auto& b : stage.blocks) h = b->forward(h);
  }
  return torch::tanh(conv_out_->forward(F::silu(norm_out_->forward(h))));
}

VqGanModelImpl::VqGanModelImpl(const VqGanOptions& options)
    : options_(options), codebook_(options.codebook) {
  encoder_ = register_module("encoder", Encoder(options));
  decoder_ = register_module("decoder", Decoder(options));
}

vq::LatentGrid VqGanModelImpl::encode(const torch::Tensor& x) {
  if (x.dim() != 5 || x.size(1) != 1) throw ShapeError("VQ-GAN input must be [N, 1, H, W, D]");
  const auto& c = options_.compression;
  const char* names[] = {"height", "width", "depth"};
  for (int ax = 0; ax < 3; ++ax) {
    if (x.size(2 + ax) % c[ax] != 0) {
      throw ShapeError(std::string(names[ax]) + " extent " + std::to_string(x.size(2 + ax)) +
                       " is not divisible by compression factor " + std::to_string(c[ax]));
    }
  }
  return vq::LatentGrid{encoder_->forward(x), false, c};
}

vq::LatentGrid VqGanModelImpl::encode(const Volume& v) {
  return encode(to_tensor(v).unsqueeze(0).unsqueeze(0));
}

torch::Tensor VqGanModelImpl::decode(const vq::LatentGrid& q) {
  if (!q.quantized) throw ValueError("decode expects a quantized latent grid");
  if (q.data.dim() != 5 || q.data.size(1) != codebook_.dim()) {
    throw ShapeError("latent grid must be [N, " + std::to_string(codebook_.dim()) + ", h, w, d]");
  }
  if (!(q.compression == options_.compression)) throw ShapeError("latent grid compression does not match the model");
  return decoder_->forward(q.data);
}

torch::Tensor VqGanModelImpl::decode_tensor(const torch::Tensor& z) {
  return decoder_->forward(z);
}

torch::Tensor VqGanModelImpl::reconstruct(const torch::Tensor& x) {
  torch::NoGradGuard no_grad;
  const auto q = vq::quantize(encode(x), codebook_);
  return decode(q.quantized);
}

void VqGanModelImpl::set_codebook(vq::Codebook cb) {
  if (cb.dim() != options_.codebook.dim) throw ShapeError("codebook dimension does not match the model");
  codebook_ = std::move(cb);
}

SliceDiscriminatorImpl::SliceDiscriminatorImpl(const DiscriminatorOptions& o) {
  std::int64_t in = 1;
  for (std::int64_t l = 0; l < o.n_layers; ++l) {
    const std::int64_t out = o.base_channels << l;
    convs_.push_back(register_module("conv" + std::to_string(l),
                                     torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(1))));
    if (l > 0) norms_.push_back(register_module("norm" + std::to_string(l), torch::nn::GroupNorm(norm_groups(out), out)));
    in = out;
  }
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 1, 3).padding(1)));
}

DiscOutput SliceDiscriminatorImpl::forward(const torch::Tensor& x) {
  DiscOutput out;
  auto h = x;
  for (std::size_t l = 0; l < convs_.size(); ++l) {
    h = convs_[l]->forward(h);
    if (l > 0) h = norms_[l - 1]->forward(h);
    h = F::leaky_relu(h, F::LeakyReLUFuncOptions().negative_slope(0.2));
    out.features.push_back(h);
  }
  out.logits = head_->forward(h);
  return out;
}

VolumeDiscriminatorImpl::VolumeDiscriminatorImpl(const DiscriminatorOptions& o) {
  std::int64_t in = 1;
  for (std::int64_t l = 0; l < o.n_layers; ++l) {
    const std::int64_t out = o.base_channels << l;
    convs_.push_back(register_module("conv" + std::to_string(l),
                                     torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, 3).stride(2).padding(1))));
    if (l > 0) norms_.push_back(register_module("norm" + std::to_string(l), torch::nn::GroupNorm(norm_groups(out), out)));
    in = out;
  }
  head_ = register_module("head", torch::nn::Conv3d(torch::nn::Conv3dOptions(in, 1, 3).padding(1)));
}

DiscOutput VolumeDiscriminatorImpl::forward(const torch::Tensor& x) {
  DiscOutput out;
  auto h = x;
  for (std::size_t l = 0; l < convs_.size(); ++l) {
    h = convs_[l]->forward(h);
    if (l > 0) h = norms_[l - 1]->forward(h);
    h = F::leaky_relu(h, F::LeakyReLUFuncOptions().negative_slope(0.2));
    out.features.push_back(h);
  }
  out.logits = head_->forward(h);
  return out;
}

DiscriminatorPair make_discriminators(const DiscriminatorOptions& options) {
  return {SliceDiscriminator(options), VolumeDiscriminator(options)};
}

torch::Tensor recon_loss(const torch::Tensor& x, const torch::Tensor& x_hat, const SliceFeatureExtractor* extractor) {
  if (x.sizes() != x_hat.sizes()) throw ShapeError("reconstruction operands differ in shape");
  if (extractor == nullptr) return (x - x_hat).abs().mean();
  if (x.dim() != 5) throw ShapeError("perceptual reconstruction loss expects [N, C, H, W, D] volumes");
  // Depth goes to the batch axis so the 2D extractor sees every slice.
  auto to_slices = [](const torch::Tensor& t) {
    return t.permute({0, 4, 1, 2, 3}).reshape({t.size(0) * t.size(4), t.size(1), t.size(2), t.size(3)});
  };
  const auto fx = extractor->features(to_slices(x));
  const auto fy = extractor->features(to_slices(x_hat));
  if (fx.size() != fy.size() || fx.empty()) throw ShapeError("feature extractor returned inconsistent layers");
  auto total = torch::zeros({}, x.options());
  for (std::size_t l = 0; l < fx.size(); ++l) total = total + (fx[l] - fy[l]).pow(2).mean();
  return total / static_cast<double>(fx.size());
}

std::int64_t random_slice_index(std::int64_t depth, Rng& rng) {
  if (depth < 1) throw ShapeError("random slice needs depth >= 1");
  return static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(depth)));
}

SliceDraw random_slice(const Volume& v, Rng& rng) {
  const auto k = random_slice_index(v.shape().d, rng);
  return {k, to_tensor(v).select(2, k).contiguous()};
}

torch::Tensor take_slices(const torch::Tensor& batch, const std::vector<std::int64_t>& indices) {
  if (batch.dim() != 5 || static_cast<std::size_t>(batch.size(0)) != indices.size()) {
    throw ShapeError("take_slices expects [N, C, H, W, D] and one index per sample");
  }
  std::vector<torch::Tensor> out;
  out.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.push_back(batch[static_cast<std::int64_t>(i)].select(3, indices[i]));
  }
  return torch::stack(out);
}

torch::Tensor feature_matching_loss(const std::vector<torch::Tensor>& real_feats,
                                    const std::vector<torch::Tensor>& fake_feats) {
  if (real_feats.size() != fake_feats.size() || real_feats.empty()) {
    throw ShapeError("feature matching needs the same non-zero number of layers");
  }
  torch::Tensor total;
  for (std::size_t l = 0; l < real_feats.size(); ++l) {
    if (real_feats[l].sizes() != fake_feats[l].sizes()) {
      throw ShapeError("feature map " + std::to_string(l) + " differs in shape");
    }
    const auto term = (real_feats[l].detach() - fake_feats[l]).abs().mean();
    total = l == 0 ? term : total + term;
  }
  return total / static_cast<double>(real_feats.size());
}

HingeLosses hinge_losses(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  return {torch::relu(1.0 - real_logits).mean() + torch::relu(1.0 + fake_logits).mean(), -fake_logits.mean()};
}

bool VqGanLossReport::all_finite() const {
  for (const double v : {recon, commit, gan_gen_slice, gan_gen_3d, gan_disc_slice, gan_disc_3d, feat_match_slice,
                         feat_match_3d}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

VqGanTrainer::VqGanTrainer(VqGanModel model, std::optional<DiscriminatorPair> discs, TrainerOptions options,
                           std::shared_ptr<const SliceFeatureExtractor> extractor)
    : model_(std::move(model)), discs_(std::move(discs)), options_(options), extractor_(std::move(extractor)) {
  const auto adam = torch::optim::AdamOptions(options_.lr).betas({options_.beta1, options_.beta2});
  gen_opt_ = std::make_unique<torch::optim::Adam>(model_->parameters(), adam);
  if (!options_.weights.adversarial_enabled()) discs_.reset();
  if (discs_) {
    auto params = discs_->slice->parameters();
    const auto vol = discs_->volume->parameters();
    params.insert(params.end(), vol.begin(), vol.end());
    disc_opt_ = std::make_unique<torch::optim::Adam>(params, adam);
  }
}

double VqGanTrainer::adversarial_weight(std::int64_t iteration) const {
  const double boundary = options_.weights.warmup_fraction * static_cast<double>(options_.total_iters);
  return static_cast<double>(iteration) < boundary ? 0.0 : 1.0;
}

VqGanLossReport VqGanTrainer::step(const torch::Tensor& batch, std::int64_t iteration) {
  const auto& w = options_.weights;
  VqGanLossReport report;
  report.adversarial_weight = discs_ ? adversarial_weight(iteration) : 0.0;

  // Slice positions come from a counter-based stream so resumed runs replay them.
  Rng slice_rng(derive_seed(derive_seed(options_.seed, "vqgan-slices"), static_cast<std::uint64_t>(iteration)));
  std::vector<std::int64_t> slice_idx;
  for (std::int64_t n = 0; n < batch.size(0); ++n) slice_idx.push_back(random_slice_index(batch.size(4), slice_rng));

  model_->train();
  gen_opt_->zero_grad();
  const auto latents = model_->encode(batch);
  const auto q = vq::quantize(latents, model_->codebook());
  const auto z_st = vq::straight_through(latents.data, q.quantized.data);
  const auto x_hat = model_->decode_tensor(z_st);
  const auto rec = recon_loss(batch, x_hat, extractor_.get());
  auto total = rec * w.recon + q.commit_loss * w.commit;

  if (discs_ && report.adversarial_weight > 0.0) {
    set_requires_grad(*discs_->slice, false);
    set_requires_grad(*discs_->volume, false);
    const auto real_s = discs_->slice->forward(take_slices(batch, slice_idx));
    const auto fake_s = discs_->slice->forward(take_slices(x_hat, slice_idx));
    const auto real_v = discs_->volume->forward(batch);
    const auto fake_v = discs_->volume->forward(x_hat);
    const double a = report.adversarial_weight;
    const auto gen_term = w.gan_slice * -fake_s.logits.mean() + w.gan_volume * -fake_v.logits.mean();
    const auto fm_term = w.feat_slice * feature_matching_loss(real_s.features, fake_s.features) +
                         w.feat_volume * feature_matching_loss(real_v.features, fake_v.features);
    if (w.adaptive_adversarial && (w.gan_slice != 0.0 || w.gan_volume != 0.0)) {
      auto& last = model_->decoder()->last_layer_weight();
      const auto g_rec = torch::autograd::grad({rec * w.recon}, {last}, {}, true)[0];
      const auto g_gan = torch::autograd::grad({gen_term}, {last}, {}, true)[0];
      report.adaptive_factor = std::clamp(g_rec.norm().item<double>() / (g_gan.norm().item<double>() + 1e-4), 0.0, 1e4);
    }
    total = total + a * (report.adaptive_factor * gen_term + fm_term);
    set_requires_grad(*discs_->slice, true);
    set_requires_grad(*discs_->volume, true);
  }
  report.recon = rec.item<double>();
  report.commit = q.commit_loss.item<double>();
  require_finite(total, "VQ-GAN generator loss at iteration " + std::to_string(iteration) +
                            " (recon=" + std::to_string(report.recon) + ", commit=" + std::to_string(report.commit) + ")");
  total.backward();
  gen_opt_->step();
  model_->codebook().update_ema(vq::sites_to_rows(latents.data.detach()), q.indices.reshape({-1}));

  if (discs_) {
    disc_opt_->zero_grad();
    const auto fake = x_hat.detach();
    const auto real_s = discs_->slice->forward(take_slices(batch, slice_idx));
    const auto fake_s = discs_->slice->forward(take_slices(fake, slice_idx));
    const auto real_v = discs_->volume->forward(batch);
    const auto fake_v = discs_->volume->forward(fake);
    const auto hs = hinge_losses(real_s.logits, fake_s.logits);
    const auto hv = hinge_losses(real_v.logits, fake_v.logits);
    // Generator-side terms are reported from the same pre-update discriminator pass.
    report.gan_gen_slice = hs.gen.item<double>();
    report.gan_gen_3d = hv.gen.item<double>();
    report.feat_match_slice = feature_matching_loss(real_s.features, fake_s.features).item<double>();
    report.feat_match_3d = feature_matching_loss(real_v.features, fake_v.features).item<double>();
    report.gan_disc_slice = hs.disc.item<double>();
    report.gan_disc_3d = hv.disc.item<double>();
    const auto disc_total = hs.disc + hv.disc;
    require_finite(disc_total, "discriminator loss at iteration " + std::to_string(iteration));
    disc_total.backward();
    disc_opt_->step();
  }
  if (!report.all_finite()) throw NumericError("non-finite VQ-GAN loss report at iteration " + std::to_string(iteration));
  return report;
}

double psnr(const torch::Tensor& reference, const torch::Tensor& estimate) {
  const double mse = (reference.to(torch::kFloat64) - estimate.to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(4.0 / mse);
}

}  // namespace latentvol::vqgan
