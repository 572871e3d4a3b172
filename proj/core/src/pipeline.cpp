#include "latentvol/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "latentvol/errors.hpp"
#include "latentvol/nn_util.hpp"
#include "latentvol/preprocess.hpp"
#include "latentvol/random.hpp"
#include "latentvol/volume_io.hpp"

namespace latentvol::pipeline {
namespace {

using nlohmann::json;

constexpr const char* kRngScheme = "counter-mt19937_64-v1";

void say(const RunOptions& o, const std::string& line) {
  if (o.log) o.log(line);
}

std::string ckpt_name(const std::string& stage, std::int64_t iteration) {
  std::ostringstream ss;
  ss << stage << '_' << std::setw(6) << std::setfill('0') << iteration << ".lvckpt";
  return ss.str();
}

// Metric CSV that survives resumption: rows at or beyond the resume point are dropped.
class MetricLog {
 public:
  MetricLog(const std::filesystem::path& file, const std::vector<std::string>& columns, std::int64_t start) {
    std::vector<std::string> kept;
    if (start > 0 && std::filesystem::exists(file)) {
      std::ifstream in(file);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        if (std::stoll(line.substr(0, comma)) <= start) kept.push_back(line);
      }
    }
    out_.open(file, std::ios::trunc);
    if (!out_) throw IoError("cannot write metric log " + file.string());
    for (std::size_t i = 0; i < columns.size(); ++i) out_ << (i ? "," : "") << columns[i];
    out_ << '\n';
    for (const auto& l : kept) out_ << l << '\n';
    out_ << std::setprecision(17);
  }

  void row(std::int64_t iteration, const std::vector<double>& values) {
    out_ << iteration;
    for (double v : values) out_ << ',' << v;
    out_ << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

void write_snapshot(const ExperimentConfig& cfg, const std::filesystem::path& file) { save_config(cfg, file); }

void add_module(Checkpoint& c, const std::string& prefix, const torch::nn::Module& m) {
  for (const auto& [name, t] : snapshot_parameters(m)) c.add(prefix + name, t);
}

void load_module(const Checkpoint& c, const std::string& prefix, torch::nn::Module& m) {
  load_parameters(m, c.with_prefix(prefix));
}

void add_codebook(Checkpoint& c, const vq::Codebook& cb) {
  c.add("codebook/vectors", cb.vectors());
  c.add("codebook/cluster_size", cb.ema_cluster_size());
  c.add("codebook/embed_sum", cb.ema_embed_sum());
}

vq::Codebook read_codebook(const Checkpoint& c) {
  const auto& m = c.meta.at("codebook");
  return vq::Codebook(c.get("codebook/vectors").clone(), c.get("codebook/cluster_size").clone(),
                      c.get("codebook/embed_sum").clone(), m.at("decay").get<double>(), m.at("eps").get<double>());
}

ExperimentConfig config_of(const Checkpoint& c) {
  auto cfg = from_json(c.config);
  if (config_hash(cfg) != c.config_hash) throw FormatError("checkpoint config does not match its recorded hash");
  return cfg;
}

void require_stage(const Checkpoint& c, const std::string& stage) {
  if (c.stage != stage) {
    throw ConfigError("expected a " + stage + " checkpoint but got stage '" + c.stage + "'");
  }
}

Checkpoint resume_checkpoint(const RunOptions& o, const std::string& stage, const std::string& hash) {
  auto c = load_checkpoint(*o.resume);
  require_stage(c, stage);
  if (c.config_hash != hash) {
    throw ConfigError("resume checkpoint was written with a different config (hash " + c.config_hash + ")");
  }
  if (c.meta.value("rng", json::object()).value("scheme", "") != kRngScheme) {
    throw ConfigError("resume checkpoint uses an unknown rng scheme");
  }
  return c;
}

torch::Tensor gather(VolumeSource& src, const std::vector<std::size_t>& idx, const std::vector<bool>& flips,
                     Axis axis) {
  std::vector<torch::Tensor> items;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto t = to_tensor(src.get(idx[i]));
    if (flips[i]) t = t.flip({static_cast<std::int64_t>(axis)});
    items.push_back(t.unsqueeze(0));
  }
  return torch::stack(items);
}

}  // namespace

vqgan::VqGanOptions vqgan_options(const ExperimentConfig& cfg) {
  vqgan::VqGanOptions o;
  o.compression = cfg.vqgan.compression;
  o.base_channels = cfg.vqgan.base_channels;
  o.channel_mult = cfg.vqgan.channel_mult;
  o.res_blocks = cfg.vqgan.res_blocks;
  o.codebook.size = cfg.vqgan.codebook_size;
  o.codebook.dim = cfg.vqgan.codebook_dim;
  o.codebook.decay = cfg.vqgan.codebook_decay;
  o.codebook.eps = cfg.vqgan.codebook_eps;
  o.codebook.seed = cfg.run.seed;
  return o;
}

vqgan::TrainerOptions trainer_options(const ExperimentConfig& cfg) {
  vqgan::TrainerOptions o;
  o.lr = cfg.vqgan.lr;
  o.total_iters = cfg.vqgan.iters;
  o.seed = cfg.run.seed;
  o.weights.recon = cfg.vqgan.w_recon;
  o.weights.commit = cfg.vqgan.w_commit;
  o.weights.gan_slice = cfg.vqgan.w_gan_slice;
  o.weights.gan_volume = cfg.vqgan.w_gan_volume;
  o.weights.feat_slice = cfg.vqgan.w_feat_slice;
  o.weights.feat_volume = cfg.vqgan.w_feat_volume;
  o.weights.warmup_fraction = cfg.vqgan.warmup_fraction;
  o.weights.adaptive_adversarial = cfg.vqgan.adaptive_adversarial;
  return o;
}

vqgan::DiscriminatorOptions discriminator_options(const ExperimentConfig& cfg) {
  return {cfg.vqgan.disc_channels, cfg.vqgan.disc_layers};
}

ddpm::UNetOptions unet_options(const ExperimentConfig& cfg) {
  ddpm::UNetOptions o;
  o.in_channels = cfg.vqgan.codebook_dim;
  o.base_channels = cfg.diffusion.base_channels;
  o.channel_mult = cfg.diffusion.channel_mult;
  o.res_blocks = cfg.diffusion.res_blocks;
  o.heads = cfg.diffusion.heads;
  o.attention_levels = cfg.diffusion.attention_levels;
  return o;
}

ddpm::NoiseSchedule schedule_for(const ExperimentConfig& cfg) {
  return ddpm::make_schedule(cfg.diffusion.timesteps, cfg.diffusion.beta_start, cfg.diffusion.beta_end);
}

VolumeSource::VolumeSource(const DatasetManifest& manifest, const std::string& split, Shape3 expected,
                           std::int64_t cache_voxels)
    : expected_(expected) {
  for (const auto& r : manifest.records_in(split)) paths_.push_back(manifest.resolve(r.path));
  if (paths_.empty()) throw ConfigError("manifest has no records in split '" + split + "'");
  count_ = paths_.size();
  cache_.resize(count_);
  cache_all_ = static_cast<double>(count_) * static_cast<double>(expected.numel()) <= static_cast<double>(cache_voxels);
}

VolumeSource::VolumeSource(std::vector<Volume> volumes, Shape3 expected) : expected_(expected) {
  if (volumes.empty()) throw ConfigError("no training volumes");
  count_ = volumes.size();
  for (auto& v : volumes) {
    if (v.shape() != expected_) throw ShapeError("volume shape " + v.shape().str() + " differs from " + expected_.str());
    cache_.emplace_back(std::move(v));
  }
}

Volume VolumeSource::load(std::size_t i) const {
  auto v = load_volume(paths_[i]);
  if (v.shape() != expected_) {
    throw ShapeError(paths_[i].string() + ": shape " + v.shape().str() + " differs from configured " + expected_.str());
  }
  if (v.min() < -1.0f - 1e-5f || v.max() > 1.0f + 1e-5f) {
    throw ValueError(paths_[i].string() + ": intensities must be normalized to [-1, 1]");
  }
  return v;
}

const Volume& VolumeSource::get(std::size_t i) {
  if (i >= count_) throw ValueError("volume index out of range");
  if (cache_[i]) return *cache_[i];
  if (cache_all_) {
    cache_[i] = load(i);
    return *cache_[i];
  }
  scratch_ = load(i);
  return *scratch_;
}

void save_adam_state(Checkpoint& ckpt, const std::string& prefix, torch::optim::Adam& opt) {
  auto& state = opt.state();
  std::size_t k = 0;
  for (auto& group : opt.param_groups()) {
    for (auto& p : group.params()) {
      const auto it = state.find(p.unsafeGetTensorImpl());
      const std::string base = prefix + std::to_string(k++) + "/";
      if (it == state.end()) continue;
      auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
      ckpt.add(base + "step", torch::tensor(s.step(), torch::kInt64));
      ckpt.add(base + "exp_avg", s.exp_avg());
      ckpt.add(base + "exp_avg_sq", s.exp_avg_sq());
    }
  }
}

void load_adam_state(const Checkpoint& ckpt, const std::string& prefix, torch::optim::Adam& opt) {
  auto& state = opt.state();
  state.clear();
  std::size_t k = 0;
  for (auto& group : opt.param_groups()) {
    for (auto& p : group.params()) {
      const std::string base = prefix + std::to_string(k++) + "/";
      if (!ckpt.has(base + "step")) continue;
      auto s = std::make_unique<torch::optim::AdamParamState>();
      s->step(ckpt.get(base + "step").item<std::int64_t>());
      const auto& m = ckpt.get(base + "exp_avg");
      const auto& v = ckpt.get(base + "exp_avg_sq");
      if (m.sizes() != p.sizes() || v.sizes() != p.sizes()) throw FormatError("optimizer state shape mismatch at " + base);
      s->exp_avg(m.clone());
      s->exp_avg_sq(v.clone());
      state[p.unsafeGetTensorImpl()] = std::move(s);
    }
  }
}

VqGanRun train_vqgan(const ExperimentConfig& cfg, const DatasetManifest& manifest, const RunOptions& options) {
  cfg.validate();
  const auto hash = config_hash(cfg);
  std::filesystem::create_directories(options.out_dir);
  write_snapshot(cfg, options.out_dir / "vqgan_config.toml");

  VolumeSource data(manifest, "train", cfg.data.image_size, cfg.run.cache_voxels);
  torch::manual_seed(derive_seed(cfg.run.seed, "vqgan-init"));
  vqgan::VqGanModel model(vqgan_options(cfg));
  auto discs = vqgan::make_discriminators(discriminator_options(cfg));
  vqgan::VqGanTrainer trainer(model, discs, trainer_options(cfg));

  std::int64_t start = 0;
  if (options.resume) {
    const auto c = resume_checkpoint(options, "vqgan", hash);
    load_module(c, "model/", *model);
    model->set_codebook(read_codebook(c));
    load_adam_state(c, "opt_gen/", trainer.generator_optimizer());
    if (auto& d = trainer.discriminators()) {
      load_module(c, "disc_slice/", *d->slice);
      load_module(c, "disc_volume/", *d->volume);
      load_adam_state(c, "opt_disc/", *trainer.discriminator_optimizer());
    }
    start = c.iteration;
    say(options, "resumed VQ-GAN training at iteration " + std::to_string(start));
  }

  const auto make_ckpt = [&](std::int64_t iteration) {
    Checkpoint c;
    c.stage = "vqgan";
    c.iteration = iteration;
    c.config = to_json(cfg);
    c.config_hash = hash;
    const auto& cb = model->codebook();
    const auto ex = vq::codebook_extrema(cb);
    c.meta = {{"rng", {{"scheme", kRngScheme}, {"seed", cfg.run.seed}, {"next_iteration", iteration}}},
              {"codebook", {{"decay", cb.decay()}, {"eps", cb.eps()}}},
              {"extrema", {{"min", ex.min}, {"max", ex.max}}}};
    add_module(c, "model/", *model);
    add_codebook(c, cb);
    save_adam_state(c, "opt_gen/", trainer.generator_optimizer());
    if (auto& d = trainer.discriminators()) {
      add_module(c, "disc_slice/", *d->slice);
      add_module(c, "disc_volume/", *d->volume);
      save_adam_state(c, "opt_disc/", *trainer.discriminator_optimizer());
    }
    return c;
  };

  MetricLog log(options.out_dir / "vqgan_metrics.csv",
                {"iteration", "recon", "commit", "gan_gen_slice", "gan_gen_3d", "gan_disc_slice", "gan_disc_3d",
                 "feat_match_slice", "feat_match_3d", "adversarial_weight", "adaptive_factor"},
                start);

  const std::int64_t end = options.stop_at ? std::min(*options.stop_at, cfg.vqgan.iters) : cfg.vqgan.iters;
  const auto order_seed = derive_seed(cfg.run.seed, "vqgan-order");
  const auto flip_seed = derive_seed(cfg.run.seed, "vqgan-flip");
  VqGanRun run;
  for (std::int64_t it = start; it < end; ++it) {
    std::vector<std::size_t> idx;
    std::vector<bool> flips;
    for (std::int64_t b = 0; b < cfg.vqgan.batch; ++b) {
      const auto pos = static_cast<std::uint64_t>(it * cfg.vqgan.batch + b);
      idx.push_back(epoch_order_index(order_seed, pos, data.size()));
      Rng flip_rng(derive_seed(flip_seed, pos));
      flips.push_back(bernoulli(flip_rng, cfg.data.flip_probability));
    }
    const auto batch = gather(data, idx, flips, cfg.data.flip_axis);
    const auto r = trainer.step(batch, it);
    run.history.emplace_back(it + 1, r);
    log.row(it + 1, {r.recon, r.commit, r.gan_gen_slice, r.gan_gen_3d, r.gan_disc_slice, r.gan_disc_3d,
                     r.feat_match_slice, r.feat_match_3d, r.adversarial_weight, r.adaptive_factor});
    if ((it + 1) % cfg.run.checkpoint_every == 0 && it + 1 != end) {
      save_checkpoint(make_ckpt(it + 1), options.out_dir / ckpt_name("vqgan", it + 1));
      say(options, "iteration " + std::to_string(it + 1) + " recon " + std::to_string(r.recon));
    }
  }
  run.checkpoint = make_ckpt(end);
  run.checkpoint_path = options.out_dir / (end == cfg.vqgan.iters ? std::string("vqgan_final.lvckpt")
                                                                   : ckpt_name("vqgan", end));
  save_checkpoint(run.checkpoint, run.checkpoint_path);
  say(options, "wrote " + run.checkpoint_path.string());
  return run;
}

vqgan::VqGanModel load_vqgan(const Checkpoint& ckpt) {
  require_stage(ckpt, "vqgan");
  const auto cfg = config_of(ckpt);
  vqgan::VqGanModel model(vqgan_options(cfg));
  load_module(ckpt, "model/", *model);
  model->set_codebook(read_codebook(ckpt));
  model->eval();
  set_requires_grad(*model, false);
  return model;
}

ddpm::UNet3d load_denoiser(const Checkpoint& ckpt, bool use_ema) {
  require_stage(ckpt, "diffusion");
  const auto cfg = config_of(ckpt);
  ddpm::UNet3d net(unet_options(cfg));
  const bool ema = use_ema && !ckpt.with_prefix("ema/").empty();
  load_module(ckpt, ema ? "ema/" : "model/", *net);
  net->eval();
  set_requires_grad(*net, false);
  return net;
}

DiffusionRun train_diffusion(const ExperimentConfig& cfg_in, const Checkpoint& vqgan_ckpt,
                             const DatasetManifest& manifest, const RunOptions& options) {
  require_stage(vqgan_ckpt, "vqgan");
  const auto stage1 = config_of(vqgan_ckpt);
  // Data, codebook and compression are fixed by stage 1.
  ExperimentConfig cfg = cfg_in;
  cfg.data = stage1.data;
  cfg.vqgan = stage1.vqgan;
  cfg.validate();
  const auto hash = config_hash(cfg);
  std::filesystem::create_directories(options.out_dir);
  write_snapshot(cfg, options.out_dir / "diffusion_config.toml");

  auto vq_model = load_vqgan(vqgan_ckpt);
  DiffusionRun run;
  run.vqgan_fingerprint_before = parameter_fingerprint(*vq_model);
  const auto extrema = vq::codebook_extrema(vq_model->codebook());

  // Normalized latents of every training volume, unflipped and flipped.
  VolumeSource data(manifest, "train", cfg.data.image_size, cfg.run.cache_voxels);
  std::vector<torch::Tensor> plain, flipped;
  {
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto x = to_tensor(data.get(i)).unsqueeze(0).unsqueeze(0);
      plain.push_back(vq::latent_normalize(vq_model->encode(x).data, extrema));
      if (cfg.data.flip_probability > 0.0) {
        const auto xf = x.flip({2 + static_cast<std::int64_t>(cfg.data.flip_axis)});
        flipped.push_back(vq::latent_normalize(vq_model->encode(xf).data, extrema));
      }
    }
  }
  auto all = torch::cat(plain);
  if (!flipped.empty()) all = torch::cat({all, torch::cat(flipped)});
  run.overflow_fraction = vq::overflow_fraction(all);
  say(options, "latent overflow fraction " + std::to_string(run.overflow_fraction));

  const auto sched = schedule_for(cfg);
  torch::manual_seed(derive_seed(cfg.run.seed, "diffusion-init"));
  ddpm::UNet3d net(unet_options(cfg));
  ddpm::UNet3d ema_net{nullptr};
  if (cfg.diffusion.ema) {
    ema_net = ddpm::UNet3d(unet_options(cfg));
    load_parameters(*ema_net, snapshot_parameters(*net));
    set_requires_grad(*ema_net, false);
  }
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(cfg.diffusion.lr));

  std::int64_t start = 0;
  if (options.resume) {
    const auto c = resume_checkpoint(options, "diffusion", hash);
    load_module(c, "model/", *net);
    if (ema_net) load_module(c, "ema/", *ema_net);
    load_adam_state(c, "opt/", opt);
    start = c.iteration;
    say(options, "resumed diffusion training at iteration " + std::to_string(start));
  }

  const auto make_ckpt = [&](std::int64_t iteration) {
    Checkpoint c;
    c.stage = "diffusion";
    c.iteration = iteration;
    c.config = to_json(cfg);
    c.config_hash = hash;
    const auto lat = cfg.latent_shape();
    c.meta = {{"rng", {{"scheme", kRngScheme}, {"seed", cfg.run.seed}, {"next_iteration", iteration}}},
              {"vqgan_config_hash", vqgan_ckpt.config_hash},
              {"extrema", {{"min", extrema.min}, {"max", extrema.max}}},
              {"latent_shape", {cfg.vqgan.codebook_dim, lat.h, lat.w, lat.d}},
              {"schedule",
               {{"T", sched.T}, {"beta_start", sched.beta_start}, {"beta_end", sched.beta_end},
                {"kind", std::string(ddpm::to_string(sched.kind))}}},
              {"overflow_fraction", run.overflow_fraction}};
    add_module(c, "model/", *net);
    if (ema_net) add_module(c, "ema/", *ema_net);
    save_adam_state(c, "opt/", opt);
    return c;
  };

  MetricLog log(options.out_dir / "diffusion_metrics.csv", {"iteration", "loss", "grad_norm"}, start);
  const auto predictor = ddpm::as_predictor(net);
  const std::int64_t n_plain = static_cast<std::int64_t>(plain.size());
  const std::int64_t end =
      options.stop_at ? std::min(*options.stop_at, cfg.diffusion.iters) : cfg.diffusion.iters;
  const auto order_seed = derive_seed(cfg.run.seed, "diffusion-order");
  const auto flip_seed = derive_seed(cfg.run.seed, "diffusion-flip");
  const auto noise_seed = derive_seed(cfg.run.seed, "diffusion-noise");
  const auto acc = cfg.diffusion.accumulation_steps;
  net->train();
  for (std::int64_t it = start; it < end; ++it) {
    opt.zero_grad();
    double loss_sum = 0.0;
    for (std::int64_t m = 0; m < acc; ++m) {
      const auto micro = static_cast<std::uint64_t>(it * acc + m);
      std::vector<std::int64_t> rows;
      for (std::int64_t b = 0; b < cfg.diffusion.batch; ++b) {
        const auto pos = micro * static_cast<std::uint64_t>(cfg.diffusion.batch) + static_cast<std::uint64_t>(b);
        auto row = static_cast<std::int64_t>(epoch_order_index(order_seed, pos, plain.size()));
        Rng flip_rng(derive_seed(flip_seed, pos));
        if (bernoulli(flip_rng, cfg.data.flip_probability)) row += n_plain;
        rows.push_back(row);
      }
      const auto x0 = all.index_select(0, torch::tensor(rows, torch::kInt64));
      auto gen = torch_generator(derive_seed(noise_seed, micro));
      const auto loss = ddpm::diffusion_loss(predictor, x0, sched, gen);
      (loss / static_cast<double>(acc)).backward();
      loss_sum += loss.item<double>();
    }
    const double grad_norm = torch::nn::utils::clip_grad_norm_(net->parameters(), cfg.diffusion.grad_clip);
    if (!std::isfinite(grad_norm)) throw NumericError("non-finite gradient norm at iteration " + std::to_string(it + 1));
    opt.step();
    if (ema_net) {
      torch::NoGradGuard no_grad;
      auto src = net->parameters();
      auto dst = ema_net->parameters();
      for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i].mul_(cfg.diffusion.ema_decay).add_(src[i], 1.0 - cfg.diffusion.ema_decay);
      }
    }
    const double loss = loss_sum / static_cast<double>(acc);
    run.history.emplace_back(it + 1, loss);
    log.row(it + 1, {loss, grad_norm});
    if ((it + 1) % cfg.run.checkpoint_every == 0 && it + 1 != end) {
      save_checkpoint(make_ckpt(it + 1), options.out_dir / ckpt_name("diffusion", it + 1));
      say(options, "iteration " + std::to_string(it + 1) + " loss " + std::to_string(loss));
    }
  }
  run.checkpoint = make_ckpt(end);
  run.checkpoint_path = options.out_dir / (end == cfg.diffusion.iters ? std::string("diffusion_final.lvckpt")
                                                                       : ckpt_name("diffusion", end));
  save_checkpoint(run.checkpoint, run.checkpoint_path);
  run.vqgan_fingerprint_after = parameter_fingerprint(*vq_model);
  if (run.vqgan_fingerprint_after != run.vqgan_fingerprint_before) {
    throw Error("stage-1 weights changed during diffusion training");
  }
  say(options, "wrote " + run.checkpoint_path.string());
  return run;
}

std::vector<Volume> generate(const Checkpoint& vqgan_ckpt, const Checkpoint& diff_ckpt, std::int64_t n,
                             std::uint64_t seed, const GenerateOptions& options) {
  require_stage(vqgan_ckpt, "vqgan");
  require_stage(diff_ckpt, "diffusion");
  if (diff_ckpt.meta.value("vqgan_config_hash", "") != vqgan_ckpt.config_hash) {
    throw ConfigError("diffusion checkpoint was not trained on this VQ-GAN checkpoint");
  }
  if (n < 0) throw ValueError("sample count must be >= 0");
  if (options.chunk < 1) throw ValueError("generation chunk must be >= 1");
  const auto vq_cfg = config_of(vqgan_ckpt);
  const auto diff_cfg = config_of(diff_ckpt);
  auto vq_model = load_vqgan(vqgan_ckpt);
  const auto extrema = vq::codebook_extrema(vq_model->codebook());
  const auto& stored = diff_ckpt.meta.at("extrema");
  if (stored.at("min").get<double>() != extrema.min || stored.at("max").get<double>() != extrema.max) {
    throw ConfigError("codebook extrema differ from those recorded at diffusion training");
  }
  std::vector<Volume> out;
  if (n == 0) return out;

  auto net = load_denoiser(diff_ckpt, options.use_ema.value_or(diff_cfg.diffusion.ema));
  const auto predictor = ddpm::as_predictor(net);
  const auto sched = schedule_for(diff_cfg);
  const auto lat = vq_cfg.latent_shape();
  const std::vector<std::int64_t> shape{vq_cfg.vqgan.codebook_dim, lat.h, lat.w, lat.d};
  const auto gen_seed = derive_seed(seed, "generate");

  torch::NoGradGuard no_grad;
  for (std::int64_t first = 0; first < n; first += options.chunk) {
    std::vector<std::uint64_t> seeds;
    for (std::int64_t i = first; i < std::min(n, first + options.chunk); ++i) {
      seeds.push_back(derive_seed(gen_seed, static_cast<std::uint64_t>(i)));
    }
    const auto z_norm = ddpm::sample_batch(predictor, shape, sched, seeds);
    const vq::LatentGrid z{vq::latent_denormalize(z_norm, extrema), false, vq_cfg.vqgan.compression};
    const auto q = vq::quantize(z, vq_model->codebook());
    const auto x = vq_model->decode(q.quantized);
    for (std::int64_t i = 0; i < x.size(0); ++i) {
      auto v = from_tensor(x[i][0], {1.0, 1.0, 1.0}, vq_cfg.data.modality);
      v.set_value_range(std::make_pair(-1.0, 1.0));
      out.push_back(std::move(v));
    }
  }
  return out;
}

}  // namespace latentvol::pipeline
