#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "latentvol/volume.hpp"
#include "latentvol/vq.hpp"

namespace latentvol::pipeline {

struct DataConfig {
  Shape3 image_size{256, 256, 32};
  Modality modality = Modality::MRI;
  Axis flip_axis = Axis::Height;
  double flip_probability = 0.5;
};

struct VqGanConfig {
  vq::Compression compression{4, 4, 4};
  std::int64_t codebook_size = 16384;
  std::int64_t codebook_dim = 8;
  double codebook_decay = 0.99;
  double codebook_eps = 1e-5;
  double lr = 3e-4;
  std::int64_t iters = 100000;
  std::int64_t batch = 2;
  std::int64_t base_channels = 32;
  std::vector<std::int64_t> channel_mult{1, 2};
  std::int64_t res_blocks = 1;
  std::int64_t disc_channels = 16;
  std::int64_t disc_layers = 2;
  double w_recon = 1.0;
  double w_commit = 0.25;
  double w_gan_slice = 1.0;
  double w_gan_volume = 1.0;
  double w_feat_slice = 1.0;
  double w_feat_volume = 1.0;
  double warmup_fraction = 0.1;
  bool adaptive_adversarial = true;
};

struct DiffusionConfig {
  double lr = 1e-4;
  std::int64_t iters = 150000;
  std::int64_t batch = 40;
  /// Micro-batches of `batch` samples averaged per optimizer step.
  std::int64_t accumulation_steps = 1;
  std::int64_t timesteps = 300;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::int64_t base_channels = 32;
  std::vector<std::int64_t> channel_mult{1, 2, 2};
  std::int64_t res_blocks = 1;
  std::int64_t heads = 1;
  std::int64_t attention_levels = 2;
  double grad_clip = 1.0;
  /// Keep an exponential moving average of the weights and sample with it.
  bool ema = false;
  double ema_decay = 0.999;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 1000;
  /// Upper bound on volumes held in memory by the training loaders.
  std::int64_t cache_voxels = 1LL << 28;
};

/// Full two-stage experiment. TOML tables: [data], [vqgan], [diffusion], [run].
struct ExperimentConfig {
  std::string name = "mrnet";
  DataConfig data;
  VqGanConfig vqgan;
  DiffusionConfig diffusion;
  RunConfig run;

  /// Throws ConfigError when an invariant fails (indivisible sizes, non-positive counts or rates, ...).
  void validate() const;
  [[nodiscard]] Shape3 latent_shape() const;
};

/// Presets: "mrnet", "adni", "duke", "lidc" (full-scale hyperparameters) and "desk" (CPU-sized).
ExperimentConfig preset(std::string_view name);
std::vector<std::string> preset_names();

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Unknown keys or wrongly typed values are ConfigErrors. Missing keys keep
/// the values of `base` (by default the preset named by the `name` key, or mrnet).
ExperimentConfig from_json(const nlohmann::json& j);
ExperimentConfig from_json(const nlohmann::json& j, const ExperimentConfig& base);

/// Reads a TOML file; `name = "<preset>"` at the top level selects the base preset.
ExperimentConfig load_config(const std::filesystem::path& file);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& file);
std::string to_toml(const ExperimentConfig& cfg);

/// Applies "section.key=value" overrides (values in TOML syntax; bare words are strings).
ExperimentConfig apply_overrides(const ExperimentConfig& cfg, const std::vector<std::string>& overrides);

/// Lower-case hex SHA-256 of the canonical JSON form.
std::string config_hash(const ExperimentConfig& cfg);
std::string sha256_hex(std::string_view bytes);

}  // namespace latentvol::pipeline
