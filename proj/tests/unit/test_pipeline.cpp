#include <gtest/gtest.h>

#include <fstream>

#include "latentvol/errors.hpp"
#include "latentvol/nn_util.hpp"
#include "latentvol/pipeline.hpp"
#include "test_support.hpp"

using namespace latentvol;
using namespace latentvol::pipeline;
using latentvol::fixtures::TempDir;

namespace {

ExperimentConfig tiny_config() {
  auto c = preset("desk");
  c.vqgan.iters = 40;
  c.vqgan.base_channels = 8;
  c.vqgan.codebook_size = 64;
  c.vqgan.disc_channels = 8;
  c.diffusion.iters = 24;
  c.diffusion.batch = 4;
  c.diffusion.base_channels = 8;
  c.diffusion.channel_mult = {1, 2};
  c.diffusion.attention_levels = 1;
  c.diffusion.timesteps = 40;
  c.run.checkpoint_every = 10;
  c.run.seed = 5;
  return c;
}

class PipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("pipeline");
    manifest_ = new DatasetManifest(fixtures::write_train_manifest(dir_->path() / "data", fixtures::phantoms(6)));
    RunOptions o;
    o.out_dir = dir_->path() / "run";
    vq_ = new VqGanRun(train_vqgan(tiny_config(), *manifest_, o));
    diff_ = new DiffusionRun(train_diffusion(tiny_config(), vq_->checkpoint, *manifest_, o));
  }
  static void TearDownTestSuite() {
    delete diff_;
    delete vq_;
    delete manifest_;
    delete dir_;
  }

  static TempDir* dir_;
  static DatasetManifest* manifest_;
  static VqGanRun* vq_;
  static DiffusionRun* diff_;
};

TempDir* PipelineTest::dir_ = nullptr;
DatasetManifest* PipelineTest::manifest_ = nullptr;
VqGanRun* PipelineTest::vq_ = nullptr;
DiffusionRun* PipelineTest::diff_ = nullptr;

}  // namespace

TEST_F(PipelineTest, RunWritesSnapshotsLogsAndCheckpoints) {
  const auto run = dir_->path() / "run";
  for (const char* f : {"vqgan_config.toml", "vqgan_metrics.csv", "vqgan_final.lvckpt", "vqgan_000010.lvckpt",
                        "diffusion_config.toml", "diffusion_metrics.csv", "diffusion_final.lvckpt"}) {
    EXPECT_TRUE(std::filesystem::exists(run / f)) << f;
  }
  EXPECT_EQ(load_config(run / "vqgan_config.toml").vqgan.iters, 40);
  std::ifstream csv(run / "vqgan_metrics.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header.rfind("iteration,recon,commit", 0), 0u);
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  EXPECT_EQ(rows, 40);
  EXPECT_EQ(vq_->checkpoint.stage, "vqgan");
  EXPECT_EQ(vq_->checkpoint.iteration, 40);
  EXPECT_EQ(vq_->history.size(), 40u);
}

TEST_F(PipelineTest, VqganReconLossFalls) {
  const auto& h = vq_->history;
  EXPECT_LT(h.back().second.recon, h.front().second.recon);
  for (const auto& [it, r] : h) EXPECT_TRUE(r.all_finite()) << it;
}

TEST_F(PipelineTest, StageOneIsFrozenDuringDiffusion) {
  EXPECT_EQ(diff_->vqgan_fingerprint_before, diff_->vqgan_fingerprint_after);
  EXPECT_NE(diff_->vqgan_fingerprint_before, 0u);
  EXPECT_EQ(diff_->history.size(), 24u);
  EXPECT_GE(diff_->overflow_fraction, 0.0);
  EXPECT_LE(diff_->overflow_fraction, 1.0);
  EXPECT_EQ(diff_->checkpoint.stage, "diffusion");
}

TEST_F(PipelineTest, CheckpointFileRoundTripIsByteIdentical) {
  const auto path = dir_->path() / "run" / "diffusion_final.lvckpt";
  const auto c = load_checkpoint(path);
  save_checkpoint(c, dir_->path() / "copy.lvckpt");
  EXPECT_EQ(serialize(load_checkpoint(dir_->path() / "copy.lvckpt")), serialize(c));
  std::ifstream a(path, std::ios::binary), b(dir_->path() / "copy.lvckpt", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(sa, sb);
}

TEST_F(PipelineTest, LoadedModelsMatchCheckpoints) {
  auto m = load_vqgan(vq_->checkpoint);
  EXPECT_FALSE(m->is_training());
  EXPECT_TRUE(torch::equal(m->codebook().vectors(), vq_->checkpoint.get("codebook/vectors")));
  EXPECT_THROW(load_vqgan(diff_->checkpoint), ConfigError);
  EXPECT_THROW(load_denoiser(vq_->checkpoint, false), ConfigError);
  EXPECT_NO_THROW(load_denoiser(diff_->checkpoint, false));
}

TEST_F(PipelineTest, GenerateIsDeterministicShapedAndBounded) {
  EXPECT_TRUE(generate(vq_->checkpoint, diff_->checkpoint, 0, 1).empty());
  const auto a = generate(vq_->checkpoint, diff_->checkpoint, 2, 123);
  const auto b = generate(vq_->checkpoint, diff_->checkpoint, 2, 123);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a[i], b[i]);
    EXPECT_EQ(a[i].shape(), (Shape3{16, 16, 8}));
    EXPECT_GE(a[i].min(), -1.0f);
    EXPECT_LE(a[i].max(), 1.0f);
  }
}

TEST_F(PipelineTest, GenerateRejectsMismatchedCheckpoints) {
  EXPECT_THROW(generate(diff_->checkpoint, vq_->checkpoint, 1, 0), ConfigError);
  auto other = vq_->checkpoint;
  other.config_hash = std::string(64, '0');
  EXPECT_THROW(generate(other, diff_->checkpoint, 1, 0), ConfigError);
  EXPECT_THROW(generate(vq_->checkpoint, diff_->checkpoint, -1, 0), Error);
}

TEST_F(PipelineTest, VqganResumeReplaysUninterruptedRun) {
  auto cfg = tiny_config();
  cfg.vqgan.iters = 110;
  cfg.run.checkpoint_every = 1000;
  RunOptions full;
  full.out_dir = dir_->path() / "full";
  const auto whole = train_vqgan(cfg, *manifest_, full);

  RunOptions first;
  first.out_dir = dir_->path() / "split";
  first.stop_at = 100;
  const auto part = train_vqgan(cfg, *manifest_, first);
  EXPECT_EQ(part.checkpoint.iteration, 100);
  RunOptions second;
  second.out_dir = first.out_dir;
  second.resume = part.checkpoint_path;
  const auto rest = train_vqgan(cfg, *manifest_, second);
  ASSERT_EQ(rest.history.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& [it, r] = rest.history[i];
    const auto& w = whole.history[100 + i].second;
    EXPECT_EQ(it, static_cast<std::int64_t>(101 + i));
    EXPECT_EQ(r.recon, w.recon) << "iteration " << it;
    EXPECT_EQ(r.commit, w.commit) << "iteration " << it;
    EXPECT_EQ(r.gan_disc_3d, w.gan_disc_3d) << "iteration " << it;
  }
  EXPECT_EQ(serialize(rest.checkpoint), serialize(whole.checkpoint));
}

TEST_F(PipelineTest, DiffusionResumeReplaysUninterruptedRun) {
  const auto cfg = tiny_config();
  RunOptions full;
  full.out_dir = dir_->path() / "dfull";
  const auto whole = train_diffusion(cfg, vq_->checkpoint, *manifest_, full);
  RunOptions first;
  first.out_dir = dir_->path() / "dsplit";
  first.stop_at = 16;
  const auto part = train_diffusion(cfg, vq_->checkpoint, *manifest_, first);
  RunOptions second;
  second.out_dir = first.out_dir;
  second.resume = part.checkpoint_path;
  const auto rest = train_diffusion(cfg, vq_->checkpoint, *manifest_, second);
  ASSERT_EQ(rest.history.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(rest.history[i].second, whole.history[16 + i].second);
  EXPECT_EQ(whole.history, diff_->history);
}

TEST_F(PipelineTest, ResumeRejectsForeignCheckpoint) {
  auto cfg = tiny_config();
  cfg.vqgan.lr = 1e-3;
  RunOptions o;
  o.out_dir = dir_->path() / "foreign";
  o.resume = vq_->checkpoint_path;
  EXPECT_THROW(train_vqgan(cfg, *manifest_, o), ConfigError);
}

TEST(PipelineData, NonconformingVolumesAreRejected) {
  TempDir dir("pipeline-bad");
  auto cfg = tiny_config();
  RunOptions o;
  o.out_dir = dir / "run";
  const auto wrong_shape = fixtures::write_train_manifest(dir / "a", {fixtures::phantom(1, {16, 16, 4})});
  EXPECT_THROW(train_vqgan(cfg, wrong_shape, o), ShapeError);
  const auto out_of_range = fixtures::write_train_manifest(dir / "b", {Volume::filled({16, 16, 8}, 3.0f)});
  EXPECT_THROW(train_vqgan(cfg, out_of_range, o), ValueError);
}

TEST(PipelineData, VolumeSourceCachesWithinBudget) {
  TempDir dir("pipeline-src");
  const auto m = fixtures::write_train_manifest(dir.path(), fixtures::phantoms(3));
  VolumeSource cached(m, "train", {16, 16, 8}, 1 << 20);
  VolumeSource streaming(m, "train", {16, 16, 8}, 1);
  ASSERT_EQ(cached.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(cached.get(i), streaming.get(i));
  EXPECT_EQ(cached.get(2), fixtures::phantom(2));
}
