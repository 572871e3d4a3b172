#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "latentvol/random.hpp"
#include "latentvol/volume.hpp"

namespace latentvol::transfer {

struct SegModelOptions {
  std::int64_t base_channels = 8;
  /// Number of stride-2 encoder stages; every extent must be divisible by 2^levels.
  std::int64_t levels = 2;
};

class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t stride);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv3d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
};
TORCH_MODULE(ConvBlock);

/// Encoder half of the segmenter; its weights are what pretraining transfers.
class SegEncoderImpl : public torch::nn::Module {
 public:
  explicit SegEncoderImpl(const SegModelOptions& options);
  /// Feature maps from full resolution down to the bottleneck.
  std::vector<torch::Tensor> forward(const torch::Tensor& x);

 private:
  std::vector<ConvBlock> blocks_;
};
TORCH_MODULE(SegEncoder);

/// 3D U-Net-style encoder-decoder: [N, 1, H, W, D] -> one output channel of the same shape.
class SegModelImpl : public torch::nn::Module {
 public:
  explicit SegModelImpl(const SegModelOptions& options);
  torch::Tensor forward(const torch::Tensor& x);
  SegEncoder& encoder() { return encoder_; }
  [[nodiscard]] const SegModelOptions& options() const { return options_; }

 private:
  SegModelOptions options_;
  SegEncoder encoder_{nullptr};
  std::vector<ConvBlock> up_blocks_;
  torch::nn::Conv3d head_{nullptr};
};
TORCH_MODULE(SegModel);

using EncoderWeights = std::vector<std::pair<std::string, torch::Tensor>>;

EncoderWeights encoder_weights(SegModel& model);
void load_encoder_weights(SegModel& model, const EncoderWeights& weights);
void save_encoder(const EncoderWeights& weights, const SegModelOptions& options, const std::filesystem::path& file);
std::pair<EncoderWeights, SegModelOptions> load_encoder(const std::filesystem::path& file);

struct SegModelMeta {
  double fraction = 1.0;
  bool pretrained = false;
};
void save_seg_model(SegModel& model, const SegModelMeta& meta, const std::filesystem::path& file);
std::pair<SegModel, SegModelMeta> load_seg_model(const std::filesystem::path& file);

struct Corruption {
  Volume corrupted;
  Volume target;
  /// 1 on zeroed voxels, 0 elsewhere.
  Volume mask;
  std::int64_t patches_masked = 0;
  std::int64_t patches_total = 0;
};

/// Zeroes round(mask_ratio * n_patches) distinct non-overlapping cuboid patches
/// chosen with `rng`. Throws ValueError unless 0 < mask_ratio < 1 and ShapeError
/// unless the patch shape divides the volume.
Corruption mask_corrupt(const Volume& v, double mask_ratio, Shape3 patch, Rng& rng);

struct PretrainConfig {
  std::int64_t steps = 100;
  std::int64_t batch = 4;
  double lr = 1e-3;
  double mask_ratio = 0.5;
  Shape3 patch{4, 4, 2};
  /// Share of the synthetic volumes kept aside to measure held-out masked loss.
  double heldout_fraction = 0.125;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  EncoderWeights encoder;
  std::vector<double> losses;
  double heldout_before = 0.0;
  double heldout_after = 0.0;
};

/// Masked-volume inpainting on unlabeled volumes; the loss is the mean squared
/// error over corrupted voxels. Returns the trained encoder weights. Throws
/// ValueError for an empty or mixed-shape set and NumericError for a non-finite loss.
PretrainResult pretrain(const SegModelOptions& options, const std::vector<Volume>& synthetic,
                        const PretrainConfig& cfg);

struct LabeledCase {
  Volume image;
  Volume mask;
  std::string patient_id;
};

/// Indices of the cases whose patients fall in the first
/// floor(fraction * n_patients) of a seeded patient permutation, so subsets
/// for growing fractions are nested. Throws ValueError for a fraction outside
/// (0, 1] or an empty selection.
std::vector<std::size_t> select_fraction(const std::vector<LabeledCase>& cases, double fraction, std::uint64_t seed);

struct FinetuneConfig {
  std::int64_t steps = 150;
  std::int64_t batch = 4;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct FinetuneResult {
  SegModel model{nullptr};
  std::vector<std::size_t> subset;
  std::vector<double> losses;
  /// Mean thresholded Dice over the batches of each pass through the subset.
  std::vector<double> epoch_dice;
};

/// Trains with equally weighted soft-Dice and binary cross-entropy on the
/// selected subset. Only `encoder_init` differs between a scratch and a
/// pretrained run with the same config: data order and the decoder
/// initialization depend on the seed alone.
FinetuneResult finetune(const SegModelOptions& options, const std::vector<LabeledCase>& train, double fraction,
                        const std::optional<EncoderWeights>& encoder_init, const FinetuneConfig& cfg,
                        const std::function<void(std::int64_t, double)>& on_epoch = {});

struct EvalReport {
  double mean_dice = 0.0;
  std::vector<double> per_case;
};

/// Logits [H, W, D] for one input volume.
using SegPredictor = std::function<torch::Tensor(const Volume&)>;

/// Binarizes sigmoid(logits) > 0.5 and averages per-case Dice. Throws ValueError for an empty test set.
EvalReport evaluate_predictor(const SegPredictor& predict, const std::vector<LabeledCase>& test);
EvalReport evaluate_seg(SegModel& model, const std::vector<LabeledCase>& test);

/// Desk-scale labeled phantoms: ellipsoids in noisy low-contrast bands.
std::vector<LabeledCase> labeled_phantoms(std::size_t count, std::uint64_t seed, Shape3 shape = {16, 16, 8});

}  // namespace latentvol::transfer
