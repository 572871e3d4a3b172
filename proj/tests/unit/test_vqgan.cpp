#include <gtest/gtest.h>

#include "latentvol/errors.hpp"
#include "latentvol/nn_util.hpp"
#include "latentvol/vqgan.hpp"
#include "test_support.hpp"

using namespace latentvol;
using namespace latentvol::vqgan;

namespace {

VqGanOptions small_options(vq::Compression c = {2, 2, 2}) {
  VqGanOptions o;
  o.compression = c;
  o.base_channels = 8;
  o.channel_mult = {1, 2};
  o.codebook.size = 64;
  o.codebook.dim = 4;
  return o;
}

VqGanModel seeded_model(const VqGanOptions& o, std::uint64_t seed) {
  torch::manual_seed(seed);
  return VqGanModel(o);
}

std::optional<DiscriminatorPair> seeded_discs(std::uint64_t seed) {
  torch::manual_seed(seed);
  return make_discriminators({8, 2});
}

}  // namespace

TEST(StrideSchedule, FactorisesPowersOfTwo) {
  const auto s = stride_schedule({4, 4, 2});
  ASSERT_EQ(s.strides.size(), 2u);
  EXPECT_EQ(s.strides[0], (std::array<std::int64_t, 3>{2, 2, 2}));
  EXPECT_EQ(s.strides[1], (std::array<std::int64_t, 3>{2, 2, 1}));
  EXPECT_TRUE(stride_schedule({1, 1, 1}).strides.empty());
  EXPECT_THROW(stride_schedule({3, 2, 2}), ConfigError);
}

TEST(VqGanModel, EncodeDecodeShapeContract) {
  struct Case {
    Shape3 image;
    vq::Compression c;
    std::vector<std::int64_t> latent;
  };
  const std::vector<Case> cases{
      {{16, 16, 8}, {4, 4, 4}, {4, 4, 2}},
      {{16, 16, 8}, {2, 2, 2}, {8, 8, 4}},
      {{16, 16, 8}, {4, 4, 2}, {4, 4, 4}},
      {{64, 64, 64}, {2, 2, 2}, {32, 32, 32}},
  };
  torch::NoGradGuard no_grad;
  for (const auto& c : cases) {
    auto o = small_options(c.c);
    o.base_channels = 4;
    auto m = seeded_model(o, 1);
    const auto x = torch::rand({1, 1, c.image.h, c.image.w, c.image.d}) * 2 - 1;
    const auto z = m->encode(x);
    EXPECT_EQ(z.data.size(1), 4);
    EXPECT_EQ(z.data.size(2), c.latent[0]);
    EXPECT_EQ(z.data.size(3), c.latent[1]);
    EXPECT_EQ(z.data.size(4), c.latent[2]);
    EXPECT_FALSE(z.quantized);
    const auto q = vq::quantize(z, m->codebook());
    const auto y = m->decode(q.quantized);
    EXPECT_EQ(y.sizes(), x.sizes());
    EXPECT_LE(y.abs().max().item<double>(), 1.0);
  }
}

TEST(VqGanModel, FullScaleLatentShape) {
  torch::NoGradGuard no_grad;
  auto o = small_options({4, 4, 4});
  o.base_channels = 2;
  o.channel_mult = {1};
  o.codebook.dim = 8;
  auto m = seeded_model(o, 2);
  const auto z = m->encode(torch::zeros({1, 1, 256, 256, 32}));
  EXPECT_EQ(z.data.sizes(), (std::vector<std::int64_t>{1, 8, 64, 64, 8}));
}

TEST(VqGanModel, ShapeAndQuantizationErrors) {
  auto m = seeded_model(small_options({4, 4, 4}), 3);
  EXPECT_THROW(m->encode(torch::zeros({1, 1, 16, 16, 6})), ShapeError);
  EXPECT_THROW(m->decode(vq::LatentGrid{torch::zeros({1, 4, 4, 4, 2}), false, {4, 4, 4}}), ValueError);
  EXPECT_THROW(m->decode(vq::LatentGrid{torch::zeros({1, 5, 4, 4, 2}), true, {4, 4, 4}}), ShapeError);
}

TEST(ReconLoss, ZeroForIdenticalAndL1Otherwise) {
  const auto x = torch::rand({2, 1, 8, 8, 4});
  EXPECT_EQ(recon_loss(x, x).item<double>(), 0.0);
  EXPECT_NEAR(recon_loss(x, x + 0.25).item<double>(), 0.25, 1e-6);
}

TEST(RandomSlice, DepthOneAndDeterminism) {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(random_slice_index(1, rng), 0);
  Rng a(7), b(7);
  EXPECT_EQ(random_slice_index(32, a), random_slice_index(32, b));
  const auto v = fixtures::phantom(1);
  Rng c(3);
  const auto draw = random_slice(v, c);
  EXPECT_EQ(draw.slice.sizes(), (std::vector<std::int64_t>{16, 16}));
  EXPECT_EQ(draw.slice[4][5].item<float>(), v.at(4, 5, draw.index));
}

TEST(RandomSlice, UniformOverDepth) {
  Rng rng(2024);
  std::vector<int> counts(32, 0);
  for (int i = 0; i < 10000; ++i) ++counts[static_cast<std::size_t>(random_slice_index(32, rng))];
  for (int c : counts) {
    EXPECT_GE(c / 1e4, 0.02);
    EXPECT_LE(c / 1e4, 0.045);
  }
}

TEST(TakeSlices, PerSampleIndices) {
  const auto b = torch::arange(2 * 3 * 3 * 4, torch::kFloat32).reshape({2, 1, 3, 3, 4});
  const auto s = take_slices(b, {1, 3});
  EXPECT_EQ(s.sizes(), (std::vector<std::int64_t>{2, 1, 3, 3}));
  EXPECT_TRUE(torch::equal(s[1][0], b[1][0].select(2, 3)));
}

TEST(FeatureMatching, Arithmetic) {
  const std::vector<torch::Tensor> a{torch::zeros({2, 3}), torch::zeros({4})};
  EXPECT_EQ(feature_matching_loss(a, a).item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(feature_matching_loss({torch::zeros({5})}, {torch::ones({5})}).item<double>(), 1.0);
  const std::vector<torch::Tensor> b{torch::full({2, 3}, 0.5), torch::full({4}, -1.5)};
  EXPECT_DOUBLE_EQ(feature_matching_loss(a, b).item<double>(), 1.0);
  EXPECT_THROW(feature_matching_loss(a, {a[0]}), ShapeError);
}

TEST(Hinge, Arithmetic) {
  const auto one = torch::ones({3, 3});
  const auto h1 = hinge_losses(one, -one);
  EXPECT_EQ(h1.disc.item<double>(), 0.0);
  const auto h2 = hinge_losses(torch::zeros({3}), torch::zeros({3}));
  EXPECT_EQ(h2.disc.item<double>(), 2.0);
  EXPECT_EQ(h2.gen.item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(hinge_losses(one, torch::full({2}, 3.0)).gen.item<double>(), -3.0);
}

TEST(Discriminators, OutputsAndFeatures) {
  auto d = seeded_discs(1);
  const auto s = d->slice->forward(torch::rand({2, 1, 16, 16}));
  EXPECT_EQ(s.logits.size(0), 2);
  EXPECT_FALSE(s.features.empty());
  const auto v = d->volume->forward(torch::rand({2, 1, 16, 16, 8}));
  EXPECT_EQ(v.logits.size(0), 2);
  EXPECT_FALSE(v.features.empty());
}

TEST(Psnr, KnownValues) {
  const auto x = torch::zeros({100});
  EXPECT_TRUE(std::isinf(psnr(x, x)));
  EXPECT_NEAR(psnr(x, x + 0.02), 10 * std::log10(4.0 / 0.0004), 1e-6);
}

TEST(VqGanTrainer, AdversarialOffIsPlainAutoencoder) {
  const auto batch = stack_batch(fixtures::phantoms(2));
  TrainerOptions opt;
  opt.total_iters = 10;
  opt.weights.gan_slice = opt.weights.gan_volume = opt.weights.feat_slice = opt.weights.feat_volume = 0.0;
  VqGanTrainer with_discs(seeded_model(small_options(), 5), seeded_discs(6), opt);
  VqGanTrainer plain(seeded_model(small_options(), 5), std::nullopt, opt);
  for (std::int64_t it = 0; it < 3; ++it) {
    const auto a = with_discs.step(batch, it);
    const auto b = plain.step(batch, it);
    EXPECT_EQ(a.recon, b.recon);
    EXPECT_EQ(a.commit, b.commit);
    EXPECT_EQ(a.adversarial_weight, 0.0);
  }
  EXPECT_EQ(parameter_fingerprint(*with_discs.model()), parameter_fingerprint(*plain.model()));
  EXPECT_TRUE(torch::equal(with_discs.model()->codebook().vectors(), plain.model()->codebook().vectors()));
}

TEST(VqGanTrainer, DiscriminatorUpdateLeavesGeneratorAlone) {
  // During warm-up the generator sees no adversarial terms, so its weights
  // must match an autoencoder-only run even though the discriminators train.
  const auto batch = stack_batch(fixtures::phantoms(2));
  TrainerOptions opt;
  opt.total_iters = 100;
  opt.weights.warmup_fraction = 0.5;
  VqGanTrainer gan(seeded_model(small_options(), 7), seeded_discs(8), opt);
  VqGanTrainer plain(seeded_model(small_options(), 7), std::nullopt, opt);
  const auto disc_before = parameter_fingerprint(*gan.discriminators()->slice);
  for (std::int64_t it = 0; it < 2; ++it) {
    gan.step(batch, it);
    plain.step(batch, it);
  }
  EXPECT_EQ(parameter_fingerprint(*gan.model()), parameter_fingerprint(*plain.model()));
  EXPECT_NE(parameter_fingerprint(*gan.discriminators()->slice), disc_before);
}

TEST(VqGanTrainer, AdversarialPhaseReportsFiniteTerms) {
  const auto batch = stack_batch(fixtures::phantoms(2));
  TrainerOptions opt;
  opt.total_iters = 10;
  opt.weights.warmup_fraction = 0.1;
  VqGanTrainer t(seeded_model(small_options(), 9), seeded_discs(10), opt);
  EXPECT_EQ(t.adversarial_weight(0), 0.0);
  EXPECT_GT(t.adversarial_weight(5), 0.0);
  const auto r = t.step(batch, 5);
  EXPECT_TRUE(r.all_finite());
  EXPECT_GT(r.adversarial_weight, 0.0);
  EXPECT_GE(r.recon, 0.0);
  EXPECT_GE(r.commit, 0.0);
  EXPECT_GE(r.gan_disc_slice, 0.0);
  EXPECT_GE(r.feat_match_3d, 0.0);
}

TEST(VqGanTrainer, IdenticalSeedsGiveIdenticalTrajectories) {
  const auto batch = stack_batch(fixtures::phantoms(2));
  TrainerOptions opt;
  opt.total_iters = 4;
  opt.seed = 3;
  VqGanTrainer a(seeded_model(small_options(), 11), seeded_discs(12), opt);
  VqGanTrainer b(seeded_model(small_options(), 11), seeded_discs(12), opt);
  for (std::int64_t it = 0; it < 4; ++it) {
    const auto ra = a.step(batch, it);
    const auto rb = b.step(batch, it);
    EXPECT_EQ(ra.recon, rb.recon);
    EXPECT_EQ(ra.gan_disc_3d, rb.gan_disc_3d);
  }
}

TEST(VqGanTrainer, OverfitsEightPhantoms) {
  const auto batch = stack_batch(fixtures::phantoms(8));
  TrainerOptions opt;
  opt.total_iters = 200;
  opt.weights.gan_slice = opt.weights.gan_volume = opt.weights.feat_slice = opt.weights.feat_volume = 0.0;
  auto o = small_options();
  o.base_channels = 16;
  VqGanTrainer t(seeded_model(o, 13), std::nullopt, opt);
  double early = 0.0, late = 0.0;
  for (std::int64_t it = 0; it < 200; ++it) {
    const auto r = t.step(batch, it);
    if (it < 10) early += r.recon / 10;
    if (it >= 190) late += r.recon / 10;
  }
  EXPECT_LE(late, 0.5 * early);
}
