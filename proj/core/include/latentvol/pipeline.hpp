#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "latentvol/checkpoint.hpp"
#include "latentvol/config.hpp"
#include "latentvol/ddpm.hpp"
#include "latentvol/manifest.hpp"
#include "latentvol/unet.hpp"
#include "latentvol/volume.hpp"
#include "latentvol/vqgan.hpp"

namespace latentvol::pipeline {

vqgan::VqGanOptions vqgan_options(const ExperimentConfig& cfg);
vqgan::TrainerOptions trainer_options(const ExperimentConfig& cfg);
vqgan::DiscriminatorOptions discriminator_options(const ExperimentConfig& cfg);
ddpm::UNetOptions unet_options(const ExperimentConfig& cfg);
ddpm::NoiseSchedule schedule_for(const ExperimentConfig& cfg);

/// Volumes of one manifest split, loaded on demand and cached while the total
/// stays under a voxel budget. Every volume is checked against the expected
/// shape (ShapeError) and the [-1, 1] range (ValueError) on first load.
class VolumeSource {
 public:
  VolumeSource(const DatasetManifest& manifest, const std::string& split, Shape3 expected,
               std::int64_t cache_voxels);
  VolumeSource(std::vector<Volume> volumes, Shape3 expected);

  [[nodiscard]] std::size_t size() const { return count_; }
  const Volume& get(std::size_t i);

 private:
  Volume load(std::size_t i) const;

  std::vector<std::filesystem::path> paths_;
  std::vector<std::optional<Volume>> cache_;
  std::optional<Volume> scratch_;
  Shape3 expected_;
  std::size_t count_ = 0;
  bool cache_all_ = true;
};

struct RunOptions {
  /// Receives checkpoints, the metric CSV and a config snapshot.
  std::filesystem::path out_dir;
  /// Checkpoint of the same stage to continue from.
  std::optional<std::filesystem::path> resume;
  /// Stop (and checkpoint) once this many iterations have completed.
  std::optional<std::int64_t> stop_at;
  /// Progress lines; silent when empty.
  std::function<void(const std::string&)> log;
};

struct VqGanRun {
  Checkpoint checkpoint;
  std::filesystem::path checkpoint_path;
  /// (1-based iteration, report) for the iterations run by this call.
  std::vector<std::pair<std::int64_t, vqgan::VqGanLossReport>> history;
};

/// Stage 1 on the "train" split. Throws ShapeError/ValueError for nonconforming
/// volumes, ConfigError for an incompatible resume checkpoint and NumericError
/// when a loss turns non-finite.
VqGanRun train_vqgan(const ExperimentConfig& cfg, const DatasetManifest& manifest, const RunOptions& options);

struct DiffusionRun {
  Checkpoint checkpoint;
  std::filesystem::path checkpoint_path;
  std::vector<std::pair<std::int64_t, double>> history;
  /// Fraction of normalized training-latent entries with |z| > 1.
  double overflow_fraction = 0.0;
  /// Parameter fingerprints of the frozen stage-1 model before and after training.
  std::uint64_t vqgan_fingerprint_before = 0;
  std::uint64_t vqgan_fingerprint_after = 0;
};

/// Stage 2: encodes the "train" split with the frozen stage-1 model, normalizes
/// with the codebook extrema and fits the noise predictor. The diffusion
/// settings come from `cfg`; data and compression come from the stage-1 checkpoint.
DiffusionRun train_diffusion(const ExperimentConfig& cfg, const Checkpoint& vqgan_ckpt,
                             const DatasetManifest& manifest, const RunOptions& options);

/// Rebuilds the stage-1 model (eval mode, gradients off). Throws ConfigError for a non-vqgan checkpoint.
vqgan::VqGanModel load_vqgan(const Checkpoint& ckpt);
/// Rebuilds the denoiser, optionally from its EMA weights. Throws ConfigError for a non-diffusion checkpoint.
ddpm::UNet3d load_denoiser(const Checkpoint& ckpt, bool use_ema);

struct GenerateOptions {
  /// Samples denoised together.
  std::int64_t chunk = 4;
  /// Use EMA weights when the checkpoint has them (default follows its config).
  std::optional<bool> use_ema;
};

/// Prior noise -> reverse chain -> denormalize -> quantize -> decode, with an
/// independent seed per sample. Throws ConfigError when the checkpoints do not belong together.
std::vector<Volume> generate(const Checkpoint& vqgan_ckpt, const Checkpoint& diff_ckpt, std::int64_t n,
                             std::uint64_t seed, const GenerateOptions& options = {});

/// Per-parameter Adam moments and step counters as checkpoint sections under `prefix`.
void save_adam_state(Checkpoint& ckpt, const std::string& prefix, torch::optim::Adam& opt);
void load_adam_state(const Checkpoint& ckpt, const std::string& prefix, torch::optim::Adam& opt);

}  // namespace latentvol::pipeline
