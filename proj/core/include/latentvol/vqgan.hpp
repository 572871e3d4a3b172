#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "latentvol/random.hpp"
#include "latentvol/volume.hpp"
#include "latentvol/vq.hpp"

namespace latentvol::vqgan {

struct VqGanOptions {
  vq::Compression compression{4, 4, 4};
  std::int64_t base_channels = 32;
  /// Channel multiplier per downsampling stage (the last entry repeats).
  std::vector<std::int64_t> channel_mult{1, 2};
  std::int64_t res_blocks = 1;
  vq::CodebookOptions codebook;
};

/// Number of stride-2 stages and which axes each stage halves.
struct StrideSchedule {
  std::vector<std::array<std::int64_t, 3>> strides;
};

/// Factorises per-axis compression into stride-2 stages, e.g. (4,4,2) gives
/// {(2,2,2), (2,2,1)}. Throws ConfigError unless every factor is a power of two.
StrideSchedule stride_schedule(const vq::Compression& c);

class ResBlock3dImpl : public torch::nn::Module {
 public:
  ResBlock3dImpl(std::int64_t in_ch, std::int64_t out_ch);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv3d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
};
TORCH_MODULE(ResBlock3d);

class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(const VqGanOptions& options);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv3d conv_in_{nullptr};
  torch::nn::Sequential body_;
  torch::nn::GroupNorm norm_out_{nullptr};
  torch::nn::Conv3d conv_out_{nullptr};
};
TORCH_MODULE(Encoder);

class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(const VqGanOptions& options);
  torch::Tensor forward(const torch::Tensor& z);
  /// Weight of the output convolution (used to balance adversarial gradients).
  torch::Tensor& last_layer_weight() { return conv_out_->weight; }

 private:
  struct Stage {
    std::vector<double> scale;
    torch::nn::Conv3d conv{nullptr};
    std::vector<ResBlock3d> blocks;
  };
  torch::nn::Conv3d conv_in_{nullptr};
  ResBlock3d mid_{nullptr};
  std::vector<Stage> stages_;
  torch::nn::GroupNorm norm_out_{nullptr};
  torch::nn::Conv3d conv_out_{nullptr};
};
TORCH_MODULE(Decoder);

/// Encoder, decoder and EMA codebook. The codebook is not a torch parameter:
/// it is updated only through exponential moving averages.
class VqGanModelImpl : public torch::nn::Module {
 public:
  explicit VqGanModelImpl(const VqGanOptions& options);

  /// [N, 1, H, W, D] -> unquantized grid [N, k, H/s_h, W/s_w, D/s_d].
  /// Throws ShapeError when an extent is not divisible by its factor.
  vq::LatentGrid encode(const torch::Tensor& x);
  vq::LatentGrid encode(const Volume& v);

  /// Quantized grid -> [N, 1, H, W, D] with values in [-1, 1].
  /// Throws ValueError for an unquantized grid and ShapeError for a channel mismatch.
  torch::Tensor decode(const vq::LatentGrid& q);
  /// Decoder forward without the quantized-flag check (training path through the straight-through estimator).
  torch::Tensor decode_tensor(const torch::Tensor& z);

  /// encode -> quantize -> decode, no gradients.
  torch::Tensor reconstruct(const torch::Tensor& x);

  [[nodiscard]] const VqGanOptions& options() const { return options_; }
  vq::Codebook& codebook() { return codebook_; }
  [[nodiscard]] const vq::Codebook& codebook() const { return codebook_; }
  void set_codebook(vq::Codebook cb);

  Encoder& encoder() { return encoder_; }
  Decoder& decoder() { return decoder_; }

 private:
  VqGanOptions options_;
  Encoder encoder_{nullptr};
  Decoder decoder_{nullptr};
  vq::Codebook codebook_;
};
TORCH_MODULE(VqGanModel);

struct DiscriminatorOptions {
  std::int64_t base_channels = 16;
  std::int64_t n_layers = 2;
};

/// Patch logits plus the intermediate activations used for feature matching.
struct DiscOutput {
  torch::Tensor logits;
  std::vector<torch::Tensor> features;
};

/// Patch discriminator over 2D slices [N, 1, H, W].
class SliceDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit SliceDiscriminatorImpl(const DiscriminatorOptions& options);
  DiscOutput forward(const torch::Tensor& x);

 private:
  std::vector<torch::nn::Conv2d> convs_;
  std::vector<torch::nn::GroupNorm> norms_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(SliceDiscriminator);

/// Patch discriminator over whole volumes [N, 1, H, W, D].
class VolumeDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit VolumeDiscriminatorImpl(const DiscriminatorOptions& options);
  DiscOutput forward(const torch::Tensor& x);

 private:
  std::vector<torch::nn::Conv3d> convs_;
  std::vector<torch::nn::GroupNorm> norms_;
  torch::nn::Conv3d head_{nullptr};
};
TORCH_MODULE(VolumeDiscriminator);

struct DiscriminatorPair {
  SliceDiscriminator slice{nullptr};
  VolumeDiscriminator volume{nullptr};
};

DiscriminatorPair make_discriminators(const DiscriminatorOptions& options);

/// Perceptual feature network applied to 2D slices [B, 1, H, W].
class SliceFeatureExtractor {
 public:
  virtual ~SliceFeatureExtractor() = default;
  virtual std::vector<torch::Tensor> features(const torch::Tensor& slices) const = 0;
};

/// Mean over depth slices of the perceptual feature distance (mean squared
/// feature difference averaged over layers). Without an extractor: mean |x - x_hat|.
torch::Tensor recon_loss(const torch::Tensor& x, const torch::Tensor& x_hat,
                         const SliceFeatureExtractor* extractor = nullptr);

/// Uniformly drawn depth index for a volume of depth `depth`.
std::int64_t random_slice_index(std::int64_t depth, Rng& rng);

struct SliceDraw {
  std::int64_t index;
  torch::Tensor slice;  // [H, W]
};
SliceDraw random_slice(const Volume& v, Rng& rng);

/// Per-sample depth slices of a [N, C, H, W, D] batch -> [N, C, H, W].
torch::Tensor take_slices(const torch::Tensor& batch, const std::vector<std::int64_t>& indices);

/// Mean over layers of the mean absolute difference. Throws ShapeError on layer mismatch.
torch::Tensor feature_matching_loss(const std::vector<torch::Tensor>& real_feats,
                                    const std::vector<torch::Tensor>& fake_feats);

struct HingeLosses {
  torch::Tensor disc;
  torch::Tensor gen;
};
/// disc = mean(relu(1 - real)) + mean(relu(1 + fake)); gen = -mean(fake).
HingeLosses hinge_losses(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);

struct LossWeights {
  double recon = 1.0;
  double commit = 0.25;
  double gan_slice = 1.0;
  double gan_volume = 1.0;
  double feat_slice = 1.0;
  double feat_volume = 1.0;
  /// Adversarial and feature-matching terms are off for this fraction of the run.
  double warmup_fraction = 0.1;
  /// Rescale the generator hinge terms so their gradient norm at the decoder
  /// output layer matches that of the reconstruction term.
  bool adaptive_adversarial = true;

  [[nodiscard]] bool adversarial_enabled() const {
    return gan_slice != 0.0 || gan_volume != 0.0 || feat_slice != 0.0 || feat_volume != 0.0;
  }
};

struct VqGanLossReport {
  double recon = 0.0;
  double commit = 0.0;
  double gan_gen_slice = 0.0;
  double gan_gen_3d = 0.0;
  double gan_disc_slice = 0.0;
  double gan_disc_3d = 0.0;
  double feat_match_slice = 0.0;
  double feat_match_3d = 0.0;
  /// Adversarial weight in effect for this step (0 during warm-up).
  double adversarial_weight = 0.0;
  /// Gradient-balancing factor applied to the generator hinge terms (1 when disabled).
  double adaptive_factor = 1.0;

  [[nodiscard]] bool all_finite() const;
};

struct TrainerOptions {
  LossWeights weights;
  double lr = 3e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  /// Length of the whole run; sets the warm-up boundary.
  std::int64_t total_iters = 1000;
  std::uint64_t seed = 0;
};

/// Owns the generator/codebook optimizer and, when adversarial terms are
/// enabled, the discriminators with their own optimizer.
class VqGanTrainer {
 public:
  VqGanTrainer(VqGanModel model, std::optional<DiscriminatorPair> discs, TrainerOptions options,
               std::shared_ptr<const SliceFeatureExtractor> extractor = nullptr);

  /// One generator+codebook update followed by one discriminator update.
  /// `iteration` (0-based) selects the warm-up phase and seeds slice selection.
  /// Throws NumericError if any loss is non-finite.
  VqGanLossReport step(const torch::Tensor& batch, std::int64_t iteration);

  VqGanModel& model() { return model_; }
  std::optional<DiscriminatorPair>& discriminators() { return discs_; }
  torch::optim::Adam& generator_optimizer() { return *gen_opt_; }
  torch::optim::Adam* discriminator_optimizer() { return disc_opt_.get(); }
  [[nodiscard]] const TrainerOptions& options() const { return options_; }
  [[nodiscard]] double adversarial_weight(std::int64_t iteration) const;

 private:
  VqGanModel model_;
  std::optional<DiscriminatorPair> discs_;
  TrainerOptions options_;
  std::shared_ptr<const SliceFeatureExtractor> extractor_;
  std::unique_ptr<torch::optim::Adam> gen_opt_;
  std::unique_ptr<torch::optim::Adam> disc_opt_;
};

/// Peak signal-to-noise ratio in dB for data spanning [-1, 1] (peak-to-peak 2).
double psnr(const torch::Tensor& reference, const torch::Tensor& estimate);

}  // namespace latentvol::vqgan
