#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "common.hpp"
#include "latentvol/errors.hpp"
#include "latentvol/manifest.hpp"
#include "latentvol/metrics.hpp"
#include "latentvol/pipeline.hpp"
#include "latentvol/volume_io.hpp"

namespace latentvol::cli {
namespace {

struct RunArgs {
  std::filesystem::path out = "runs";
  std::optional<std::filesystem::path> resume;
  std::optional<std::int64_t> stop_at;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--out", out, "Output directory")->capture_default_str();
    cmd.add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
    cmd.add_option("--stop-at", stop_at, "Stop after this many iterations");
  }

  [[nodiscard]] pipeline::RunOptions options() const {
    std::filesystem::create_directories(out);
    return {out, resume, stop_at, log_line};
  }
};

std::string sample_name(std::int64_t i) {
  std::ostringstream ss;
  ss << "sample_" << std::setw(4) << std::setfill('0') << i;
  return ss.str();
}

}  // namespace

void register_train(CLI::App& app) {
  {
    auto* cmd = app.add_subcommand("train-vqgan", "Stage 1: train the VQ-GAN autoencoder");
    auto cfg = std::make_shared<ConfigArgs>();
    auto run = std::make_shared<RunArgs>();
    auto manifest = std::make_shared<std::filesystem::path>();
    cfg->add_to(*cmd);
    run->add_to(*cmd);
    cmd->add_option("--manifest", *manifest, "JSON-lines dataset manifest")->required()->check(CLI::ExistingFile);
    cmd->callback([=] {
      const auto r = pipeline::train_vqgan(cfg->load(), DatasetManifest::load(*manifest), run->options());
      print_json({{"checkpoint", r.checkpoint_path.string()}, {"iteration", r.checkpoint.iteration}});
    });
  }
  {
    auto* cmd = app.add_subcommand("train-diffusion", "Stage 2: train the latent denoiser");
    auto cfg = std::make_shared<ConfigArgs>();
    auto run = std::make_shared<RunArgs>();
    auto manifest = std::make_shared<std::filesystem::path>();
    auto vq = std::make_shared<std::filesystem::path>();
    cfg->add_to(*cmd);
    run->add_to(*cmd);
    cmd->add_option("--manifest", *manifest, "JSON-lines dataset manifest")->required()->check(CLI::ExistingFile);
    cmd->add_option("--vqgan-ckpt", *vq, "Stage-1 checkpoint")->required()->check(CLI::ExistingFile);
    cmd->callback([=] {
      const auto r = pipeline::train_diffusion(cfg->load(), pipeline::load_checkpoint(*vq),
                                               DatasetManifest::load(*manifest), run->options());
      print_json({{"checkpoint", r.checkpoint_path.string()},
                  {"iteration", r.checkpoint.iteration},
                  {"overflow_fraction", r.overflow_fraction}});
    });
  }
  {
    auto* cmd = app.add_subcommand("generate", "Sample volumes from trained checkpoints");
    struct Args {
      std::filesystem::path vq, diff, out = "samples";
      std::int64_t n = 8;
      std::uint64_t seed = 0;
      std::int64_t chunk = 4;
      std::optional<bool> ema;
    };
    auto a = std::make_shared<Args>();
    cmd->add_option("--vqgan-ckpt", a->vq, "Stage-1 checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("--diff-ckpt", a->diff, "Stage-2 checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("-n,--count", a->n, "Number of samples")->capture_default_str();
    cmd->add_option("--seed", a->seed, "Sampling seed")->capture_default_str();
    cmd->add_option("--out", a->out, "Output directory")->capture_default_str();
    cmd->add_option("--chunk", a->chunk, "Samples denoised together")->capture_default_str();
    cmd->add_flag("--ema,!--no-ema", a->ema, "Use (or ignore) EMA weights");
    cmd->callback([a] {
      if (a->n < 1) throw ConfigError("--count must be >= 1");
      const auto vq = pipeline::load_checkpoint(a->vq);
      const auto diff = pipeline::load_checkpoint(a->diff);
      pipeline::GenerateOptions opts;
      opts.chunk = a->chunk;
      opts.use_ema = a->ema;
      const auto samples = pipeline::generate(vq, diff, a->n, a->seed, opts);
      std::filesystem::create_directories(a->out);
      nlohmann::json files = nlohmann::json::array();
      for (std::size_t i = 0; i < samples.size(); ++i) {
        files.push_back(save_volume(samples[i], a->out / sample_name(static_cast<std::int64_t>(i))).string());
      }
      print_json({{"count", samples.size()}, {"seed", a->seed}, {"files", files}});
    });
  }
  {
    auto* cmd = app.add_subcommand("eval-diversity", "Mean pairwise MS-SSIM over a directory of volumes");
    struct Args {
      std::filesystem::path dir;
      std::int64_t pairs = 1000;
      std::uint64_t seed = 0;
      std::optional<std::filesystem::path> scores;
      std::int64_t window = 7;
      bool volumetric = false;
    };
    auto a = std::make_shared<Args>();
    cmd->add_option("--dir", a->dir, "Directory of volumes")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--pairs", a->pairs, "Number of random pairs")->capture_default_str();
    cmd->add_option("--seed", a->seed, "Pair sampling seed")->capture_default_str();
    cmd->add_option("--scores", a->scores, "Per-pair CSV (default <dir>/diversity_scores.csv)");
    cmd->add_option("--window", a->window, "SSIM window size")->capture_default_str();
    cmd->add_flag("--volumetric", a->volumetric, "3D windows instead of slice-wise 2D");
    cmd->callback([a] {
      std::vector<Volume> volumes;
      const auto files = list_volumes(a->dir);
      for (const auto& f : files) volumes.push_back(load_volume(f));
      metrics::MsSsimParams params;
      params.ssim.window = a->window;
      params.ssim.volumetric = a->volumetric;
      const auto r = metrics::diversity_score(volumes, a->pairs, a->seed, params);
      const auto scores = a->scores.value_or(a->dir / "diversity_scores.csv");
      std::ofstream out(scores);
      if (!out) throw IoError("cannot write " + scores.string());
      out << "pair,i,j,file_i,file_j,ms_ssim\n" << std::setprecision(17);
      for (std::size_t k = 0; k < r.pairs.size(); ++k) {
        const auto [i, j] = r.pairs[k];
        out << k << ',' << i << ',' << j << ',' << files[static_cast<std::size_t>(i)].filename().string() << ','
            << files[static_cast<std::size_t>(j)].filename().string() << ',' << r.scores[k] << '\n';
      }
      print_json({{"mean", r.mean}, {"n_pairs", r.n_pairs}, {"seed", r.seed}, {"scores_path", scores.string()}});
    });
  }
}

}  // namespace latentvol::cli
