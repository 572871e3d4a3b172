#include <gtest/gtest.h>

#include <limits>

#include "latentvol/errors.hpp"
#include "latentvol/vq.hpp"

using namespace latentvol;
using namespace latentvol::vq;

namespace {

torch::Tensor f64(std::vector<double> v, std::vector<std::int64_t> shape) {
  return torch::tensor(v, torch::kFloat64).reshape(shape);
}

std::int64_t scan_nearest(const torch::Tensor& vec, const torch::Tensor& rows) {
  const auto v = vec.accessor<float, 1>();
  const auto r = rows.accessor<float, 2>();
  std::int64_t best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::int64_t k = 0; k < rows.size(0); ++k) {
    double d = 0.0;
    for (std::int64_t j = 0; j < rows.size(1); ++j) {
      const double diff = double(v[j]) - double(r[k][j]);
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

Codebook random_codebook(std::int64_t k, std::int64_t d, std::uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return Codebook(torch::randn({k, d}, gen), 0.99, 1e-5);
}

}  // namespace

TEST(NearestCode, ExactRowAndNearerPoint) {
  const auto cb = random_codebook(16, 8, 1);
  EXPECT_EQ(nearest_code(cb.vectors()[7], cb), 7);
  const Codebook line(torch::tensor({0.0f, 1.0f}).reshape({2, 1}), 0.99, 1e-5);
  EXPECT_EQ(nearest_code(torch::tensor({0.4f}), line), 0);
  EXPECT_EQ(nearest_code(torch::tensor({0.6f}), line), 1);
}

TEST(NearestCode, TiesGoToSmallestIndex) {
  const Codebook cb(torch::tensor({1.0f, -1.0f, 1.0f}).reshape({3, 1}), 0.99, 1e-5);
  EXPECT_EQ(nearest_code(torch::tensor({0.0f}), cb), 0);
  EXPECT_EQ(nearest_code(torch::tensor({1.0f}), cb), 0);
}

TEST(NearestCode, MatchesExhaustiveScan) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(99);
  const auto cb = random_codebook(64, 8, 2);
  const auto vecs = torch::randn({1000, 8}, gen);
  const auto assigned = assign_codes(vecs, cb);
  for (std::int64_t i = 0; i < 1000; ++i) {
    const auto oracle = scan_nearest(vecs[i], cb.vectors());
    ASSERT_EQ(nearest_code(vecs[i], cb), oracle) << "vector " << i;
    ASSERT_EQ(assigned[i].item<std::int64_t>(), oracle) << "vector " << i;
  }
}

TEST(NearestCode, LargeCodebookWithDuplicatesAndOffset) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(5);
  auto base = torch::randn({1024, 8}, gen) * 1e-2 + 1e3;
  const auto rows = torch::cat({base, base.narrow(0, 0, 512), base.narrow(0, 256, 512) + 1e-4});
  const Codebook cb(rows, 0.99, 1e-5);
  const auto picks = torch::randint(0, rows.size(0), {300}, gen);
  const auto mids = (rows.index_select(0, picks) + rows.index_select(0, (picks + 7) % rows.size(0))) / 2;
  const auto vecs = torch::cat({rows.index_select(0, picks), mids, torch::randn({300, 8}, gen) * 1e-2 + 1e3});
  const auto assigned = assign_codes(vecs, cb);
  for (std::int64_t i = 0; i < vecs.size(0); ++i) {
    ASSERT_EQ(assigned[i].item<std::int64_t>(), scan_nearest(vecs[i], cb.vectors())) << "vector " << i;
  }
}

TEST(Quantize, CommitLossArithmetic) {
  const Codebook cb(torch::tensor({0.0f, 1.0f}).reshape({2, 1}), 0.99, 1e-5);
  LatentGrid g{torch::full({1, 1, 1, 1, 1}, 0.4f), false, {}};
  const auto q = quantize(g, cb);
  EXPECT_EQ(q.indices.item<std::int64_t>(), 0);
  EXPECT_NEAR(q.commit_loss.item<double>(), 0.16, 1e-7);
  EXPECT_TRUE(q.quantized.quantized);
}

TEST(Quantize, CodebookRowsHaveZeroCommitLoss) {
  const auto cb = random_codebook(8, 3, 3);
  const auto idx = torch::tensor({0, 5, 7, 5}, torch::kInt64).reshape({1, 2, 2, 1});
  LatentGrid g{lookup(idx, cb), false, {}};
  const auto q = quantize(g, cb);
  EXPECT_TRUE(torch::equal(q.indices, idx));
  EXPECT_EQ(q.commit_loss.item<double>(), 0.0);
}

TEST(Quantize, SitewiseAgreesWithNearestCode) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(4);
  const auto cb = random_codebook(32, 8, 4);
  LatentGrid g{torch::randn({1, 8, 4, 4, 2}, gen), false, {}};
  const auto q = quantize(g, cb);
  for (std::int64_t h = 0; h < 4; ++h)
    for (std::int64_t w = 0; w < 4; ++w)
      for (std::int64_t d = 0; d < 2; ++d) {
        const auto site = g.data.index({0, torch::indexing::Slice(), h, w, d}).contiguous();
        const auto k = nearest_code(site, cb);
        ASSERT_EQ(q.indices[0][h][w][d].item<std::int64_t>(), k);
        ASSERT_TRUE(torch::equal(q.quantized.data.index({0, torch::indexing::Slice(), h, w, d}), cb.vectors()[k]));
      }
  EXPECT_GE(q.commit_loss.item<double>(), 0.0);
}

TEST(Quantize, RejectsBadInput) {
  const auto cb = random_codebook(8, 3, 5);
  EXPECT_THROW(quantize(LatentGrid{torch::zeros({1, 4, 2, 2, 2}), false, {}}, cb), ShapeError);
  EXPECT_THROW(quantize(LatentGrid{torch::zeros({1, 3, 2, 2, 2}), true, {}}, cb), ValueError);
}

TEST(Quantize, CommitLossGradientFlowsToLatentsOnly) {
  const auto cb = random_codebook(8, 3, 6);
  auto z = torch::randn({1, 3, 2, 2, 1}).set_requires_grad(true);
  const auto q = quantize(LatentGrid{z, false, {}}, cb);
  q.commit_loss.backward();
  ASSERT_TRUE(z.grad().defined());
  const auto expect = 2.0 * (z.detach() - q.quantized.data) / static_cast<double>(z.numel());
  EXPECT_TRUE(torch::allclose(z.grad(), expect, 1e-5, 1e-7));
  EXPECT_FALSE(q.quantized.data.requires_grad());
}

TEST(StraightThrough, ForwardIsQuantizedAndGradientIsIdentity) {
  auto z = torch::randn({2, 3, 2, 2, 2}).set_requires_grad(true);
  const auto q = torch::round(z.detach());
  const auto y = straight_through(z, q);
  EXPECT_TRUE(torch::equal(y.detach(), q));
  y.sum().backward();
  EXPECT_TRUE(torch::equal(z.grad(), torch::ones_like(z)));
  EXPECT_THROW(straight_through(z, q.reshape({-1})), ShapeError);
}

TEST(StraightThrough, GradientMatchesFiniteDifferenceOfIdentityMap) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(8);
  const auto w = torch::randn({12}, gen).to(torch::kFloat64);
  auto loss = [&w](const torch::Tensor& y) { return (w * y * y).sum() + torch::sin(y).sum(); };
  auto z = torch::randn({12}, gen).to(torch::kFloat64).set_requires_grad(true);
  const auto q = torch::round(z.detach() * 4.0) / 4.0;
  loss(straight_through(z, q)).backward();
  const double h = 1e-6;
  for (std::int64_t i = 0; i < 12; ++i) {
    auto plus = q.clone(), minus = q.clone();
    plus[i] += h;
    minus[i] -= h;
    const double fd = (loss(plus).item<double>() - loss(minus).item<double>()) / (2 * h);
    const double g = z.grad()[i].item<double>();
    EXPECT_NEAR(g, fd, 1e-4 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Ema, HandComputedSingleStep) {
  const double gamma = 0.9, eps = 1e-5;
  Codebook cb(f64({0.0, 1.0}, {2, 1}), gamma, eps);
  const auto latents = f64({0.2, 0.4, 0.9}, {3, 1});
  const auto assign = torch::tensor({0, 0, 1}, torch::kInt64);
  const auto next = ema_update(cb, latents, assign);

  // Accumulators start at N = 1, m = e.
  const double n0 = 0.9 * 1.0 + 0.1 * 2.0;          // 1.1
  const double n1 = 0.9 * 1.0 + 0.1 * 1.0;          // 1.0
  const double m0 = 0.9 * 0.0 + 0.1 * (0.2 + 0.4);  // 0.06
  const double m1 = 0.9 * 1.0 + 0.1 * 0.9;          // 0.99
  const double total = n0 + n1;
  const double s0 = (n0 + eps) / (total + 2 * eps) * total;
  const double s1 = (n1 + eps) / (total + 2 * eps) * total;

  EXPECT_NEAR(next.ema_cluster_size()[0].item<double>(), n0, 1e-12);
  EXPECT_NEAR(next.ema_cluster_size()[1].item<double>(), n1, 1e-12);
  EXPECT_NEAR(next.ema_embed_sum()[0][0].item<double>(), m0, 1e-12);
  EXPECT_NEAR(next.ema_embed_sum()[1][0].item<double>(), m1, 1e-12);
  EXPECT_NEAR(next.vectors()[0][0].item<double>(), m0 / s0, 1e-9);
  EXPECT_NEAR(next.vectors()[1][0].item<double>(), m1 / s1, 1e-9);
  EXPECT_NEAR(next.vectors()[0][0].item<double>(), 0.0545454782, 1e-9);
  // The input codebook is untouched.
  EXPECT_EQ(cb.vectors()[0][0].item<double>(), 0.0);
}

TEST(Ema, DecayFreeLimitGivesClusterMeans) {
  Codebook cb(f64({0.0, 0.0, 5.0, 5.0}, {2, 2}), 0.0, 1e-5);
  std::vector<double> vals;
  for (int i = 0; i < 500; ++i) vals.insert(vals.end(), {1.0 + i % 3, 2.0});
  for (int i = 0; i < 500; ++i) vals.insert(vals.end(), {-1.0, 4.0 + i % 2});
  const auto latents = f64(vals, {1000, 2});
  auto assign = torch::cat({torch::zeros({500}, torch::kInt64), torch::ones({500}, torch::kInt64)});
  cb.update_ema(latents, assign);
  EXPECT_NEAR(cb.vectors()[0][0].item<double>(), latents.slice(0, 0, 500).select(1, 0).mean().item<double>(), 1e-6);
  EXPECT_NEAR(cb.vectors()[1][1].item<double>(), 4.5, 1e-6);
}

TEST(Ema, UnitDecayIsFixedPoint) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(3);
  const auto v = torch::randn({4, 2}, gen).to(torch::kFloat64);
  Codebook cb(v, 1.0, 1e-5);
  const auto before_n = cb.ema_cluster_size().clone();
  const auto before_m = cb.ema_embed_sum().clone();
  cb.update_ema(torch::randn({10, 2}, gen).to(torch::kFloat64), torch::randint(0, 4, {10}, gen));
  EXPECT_TRUE(torch::equal(cb.ema_cluster_size(), before_n));
  EXPECT_TRUE(torch::equal(cb.ema_embed_sum(), before_m));
  EXPECT_TRUE(torch::allclose(cb.vectors(), v, 0, 1e-5));
}

TEST(Ema, UnusedCodeKeepsNonzeroCount) {
  Codebook cb(f64({0.0, 1.0}, {2, 1}), 0.5, 1e-5);
  cb.update_ema(f64({0.1, 0.2}, {2, 1}), torch::tensor({0, 0}, torch::kInt64));
  EXPECT_NEAR(cb.ema_cluster_size()[1].item<double>(), 0.5, 1e-12);
  EXPECT_TRUE(torch::isfinite(cb.vectors()).all().item<bool>());
}

TEST(Ema, RejectsOutOfRangeAssignments) {
  Codebook cb(f64({0.0, 1.0}, {2, 1}), 0.5, 1e-5);
  EXPECT_THROW(cb.update_ema(f64({0.1}, {1, 1}), torch::tensor({2}, torch::kInt64)), ValueError);
}

TEST(Extrema, ClosedCasesAndExhaustiveScan) {
  const Codebook cb(f64({-2.0, 0.0, 1.0, 3.0}, {2, 2}), 0.99, 1e-5);
  const auto ex = codebook_extrema(cb);
  EXPECT_EQ(ex.min, -2.0);
  EXPECT_EQ(ex.max, 3.0);
  EXPECT_THROW(codebook_extrema(Codebook(torch::full({3, 2}, 0.5), 0.99, 1e-5)), ValueError);

  const auto rnd = random_codebook(50, 4, 12);
  const auto acc = rnd.vectors().accessor<float, 2>();
  double lo = acc[0][0], hi = acc[0][0];
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 4; ++j) {
      lo = std::min<double>(lo, acc[i][j]);
      hi = std::max<double>(hi, acc[i][j]);
    }
  EXPECT_EQ(codebook_extrema(rnd).min, lo);
  EXPECT_EQ(codebook_extrema(rnd).max, hi);
}

TEST(LatentNormalize, EndpointsAndRoundTrip) {
  const Extrema ex{-0.37, 1.91};
  const auto ends = torch::tensor({ex.min, ex.max, 0.5 * (ex.min + ex.max)}, torch::kFloat64);
  const auto n = latent_normalize(ends, ex);
  EXPECT_EQ(n[0].item<double>(), -1.0);
  EXPECT_EQ(n[1].item<double>(), 1.0);
  const auto back = latent_denormalize(torch::tensor({-1.0, 1.0, 0.0}, torch::kFloat64), ex);
  EXPECT_EQ(back[0].item<double>(), ex.min);
  EXPECT_EQ(back[1].item<double>(), ex.max);
  EXPECT_NEAR(back[2].item<double>(), 0.5 * (ex.min + ex.max), 1e-15);

  auto gen = at::make_generator<at::CPUGeneratorImpl>(1);
  const auto z = torch::randn({1000}, gen).to(torch::kFloat64) * 3.0;
  EXPECT_LE((latent_denormalize(latent_normalize(z, ex), ex) - z).abs().max().item<double>(), 1e-10);
}

TEST(LatentNormalize, QuantizedCodesLandInUnitInterval) {
  const auto cb = random_codebook(256, 8, 21);
  const auto ex = codebook_extrema(cb);
  const auto n = latent_normalize(cb.vectors(), ex);
  EXPECT_GE(n.min().item<double>(), -1.0);
  EXPECT_LE(n.max().item<double>(), 1.0);
  EXPECT_EQ(overflow_fraction(n), 0.0);
  EXPECT_DOUBLE_EQ(overflow_fraction(torch::tensor({0.0, 1.5, -2.0, 0.3})), 0.5);
}

TEST(Codebook, SeededUniformInitialisation) {
  CodebookOptions opt;
  opt.size = 64;
  opt.dim = 4;
  opt.seed = 3;
  const Codebook a(opt), b(opt);
  EXPECT_TRUE(torch::equal(a.vectors(), b.vectors()));
  EXPECT_LE(a.vectors().abs().max().item<double>(), 1.0 / 64);
  EXPECT_TRUE(torch::equal(a.ema_embed_sum(), a.vectors()));
  EXPECT_TRUE(torch::equal(a.ema_cluster_size(), torch::ones({64})));
}

TEST(SiteRows, RoundTrip) {
  const auto g = torch::arange(2 * 3 * 2 * 2 * 1, torch::kFloat32).reshape({2, 3, 2, 2, 1});
  const auto rows = sites_to_rows(g);
  EXPECT_EQ(rows.sizes(), (std::vector<std::int64_t>{8, 3}));
  EXPECT_EQ(rows[1][2].item<float>(), g[0][2][0][1][0].item<float>());
  EXPECT_TRUE(torch::equal(rows_to_sites(rows, g.sizes()), g));
}
