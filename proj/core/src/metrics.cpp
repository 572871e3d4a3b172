#include "latentvol/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "latentvol/errors.hpp"
#include "latentvol/random.hpp"

namespace latentvol::metrics {
namespace F = torch::nn::functional;
namespace {

torch::Tensor gaussian_1d(const SsimParams& p) {
  if (p.window < 1 || p.window % 2 == 0) throw ValueError("SSIM window must be odd and >= 1");
  if (!(p.sigma > 0.0)) throw ValueError("SSIM sigma must be > 0");
  auto g = torch::empty({p.window}, torch::kFloat64);
  const double c = static_cast<double>(p.window - 1) / 2.0;
  for (std::int64_t i = 0; i < p.window; ++i) {
    const double x = static_cast<double>(i) - c;
    g[i] = std::exp(-x * x / (2.0 * p.sigma * p.sigma));
  }
  return g / g.sum();
}

struct Maps {
  torch::Tensor ssim;  // per-window SSIM
  torch::Tensor cs;    // per-window contrast-structure term
};

// x, y: [B, 1, H, W] (2D) or [B, 1, H, W, D] (volumetric), float64.
Maps ssim_maps(const torch::Tensor& x, const torch::Tensor& y, const SsimParams& p) {
  const auto g = gaussian_1d(p);
  const bool vol = x.dim() == 5;
  for (std::int64_t d = 2; d < x.dim(); ++d) {
    if (x.size(d) < p.window) {
      throw ShapeError("SSIM window " + std::to_string(p.window) + " exceeds image extent " + std::to_string(x.size(d)));
    }
  }
  torch::Tensor kernel = torch::outer(g, g);
  if (vol) kernel = kernel.unsqueeze(-1) * g.reshape({1, 1, -1});
  kernel = kernel.unsqueeze(0).unsqueeze(0);
  auto filt = [&](const torch::Tensor& t) { return vol ? F::conv3d(t, kernel) : F::conv2d(t, kernel); };

  const double c1 = std::pow(p.k1 * p.data_range, 2);
  const double c2 = std::pow(p.k2 * p.data_range, 2);
  const auto mu_x = filt(x);
  const auto mu_y = filt(y);
  const auto mu_xy = mu_x * mu_y;
  const auto mu_xx = mu_x * mu_x;
  const auto mu_yy = mu_y * mu_y;
  const auto s_xx = filt(x * x) - mu_xx;
  const auto s_yy = filt(y * y) - mu_yy;
  const auto s_xy = filt(x * y) - mu_xy;
  const auto cs = (2.0 * s_xy + c2) / (s_xx + s_yy + c2);
  const auto lum = (2.0 * mu_xy + c1) / (mu_xx + mu_yy + c1);
  return {lum * cs, cs};
}

// Brings 2D [H, W] or 3D [H, W, D] inputs to a conv batch: slices along depth,
// or one volume when volumetric.
torch::Tensor as_batch(const torch::Tensor& t, bool volumetric) {
  const auto x = t.to(torch::kFloat64);
  if (x.dim() == 2) return x.unsqueeze(0).unsqueeze(0);
  if (x.dim() != 3) throw ShapeError("SSIM expects [H, W] or [H, W, D] inputs");
  if (volumetric) return x.unsqueeze(0).unsqueeze(0);
  return x.permute({2, 0, 1}).unsqueeze(1);
}

void check_pair(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw ShapeError("SSIM inputs differ in shape");
}

std::vector<std::int64_t> spatial_extents(const torch::IntArrayRef& shape, bool volumetric) {
  std::vector<std::int64_t> e{shape[0], shape[1]};
  if (volumetric && shape.size() == 3) e.push_back(shape[2]);
  return e;
}

}  // namespace

double ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimParams& params) {
  check_pair(a, b);
  const bool vol = params.volumetric && a.dim() == 3;
  const auto m = ssim_maps(as_batch(a, vol), as_batch(b, vol), params);
  // Mean per slice, then mean over slices.
  return m.ssim.flatten(1).mean(1).mean().item<double>();
}

double ssim(const Volume& a, const Volume& b, const SsimParams& params) {
  return ssim(to_tensor(a), to_tensor(b), params);
}

std::vector<double> default_ms_ssim_weights() {
  std::vector<double> w{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= s;
  return w;
}

std::int64_t ms_ssim_scales(const torch::IntArrayRef& shape, const MsSsimParams& params) {
  const auto ext = spatial_extents(shape, params.ssim.volumetric);
  std::int64_t smallest = *std::min_element(ext.begin(), ext.end());
  std::int64_t scales = 0;
  while (scales < params.n_scales && smallest >= params.ssim.window) {
    ++scales;
    smallest /= 2;
  }
  return scales;
}

MsSsimResult ms_ssim_detailed(const torch::Tensor& a, const torch::Tensor& b, const MsSsimParams& params) {
  check_pair(a, b);
  if (params.n_scales < 1 || static_cast<std::int64_t>(params.weights.size()) != params.n_scales) {
    throw ValueError("MS-SSIM needs one weight per scale");
  }
  double total = 0.0;
  for (double w : params.weights) {
    if (!(w > 0.0)) throw ValueError("MS-SSIM weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ValueError("MS-SSIM weights must sum to 1");
  if (a.dim() != 2 && a.dim() != 3) throw ShapeError("MS-SSIM expects [H, W] or [H, W, D] inputs");

  const auto scales = ms_ssim_scales(a.sizes(), params);
  if (scales == 0) throw ShapeError("MS-SSIM window does not fit the input");
  if (scales < params.n_scales && params.strict) {
    throw ShapeError("input supports only " + std::to_string(scales) + " of " + std::to_string(params.n_scales) +
                     " MS-SSIM scales");
  }
  std::vector<double> w(params.weights.begin(), params.weights.begin() + scales);
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= wsum;

  const bool vol = params.ssim.volumetric && a.dim() == 3;
  auto x = as_batch(a, vol);
  auto y = as_batch(b, vol);
  // Per-batch-entry (slice) product of weighted terms.
  auto score = torch::ones({x.size(0)}, torch::kFloat64);
  for (std::int64_t s = 0; s < scales; ++s) {
    const auto m = ssim_maps(x, y, params.ssim);
    const auto& term = s + 1 == scales ? m.ssim : m.cs;
    score = score * torch::relu(term.flatten(1).mean(1)).pow(w[static_cast<std::size_t>(s)]);
    if (s + 1 < scales) {
      x = vol ? F::avg_pool3d(x, F::AvgPool3dFuncOptions(2)) : F::avg_pool2d(x, F::AvgPool2dFuncOptions(2));
      y = vol ? F::avg_pool3d(y, F::AvgPool3dFuncOptions(2)) : F::avg_pool2d(y, F::AvgPool2dFuncOptions(2));
    }
  }
  return {score.mean().item<double>(), scales, scales < params.n_scales};
}

double ms_ssim(const torch::Tensor& a, const torch::Tensor& b, const MsSsimParams& params) {
  return ms_ssim_detailed(a, b, params).value;
}

double ms_ssim(const Volume& a, const Volume& b, const MsSsimParams& params) {
  return ms_ssim(to_tensor(a), to_tensor(b), params);
}

DiversityReport diversity_score(const std::vector<Volume>& volumes, std::int64_t n_pairs, std::uint64_t seed,
                                const MsSsimParams& params) {
  if (volumes.size() < 2) throw ValueError("diversity needs at least two volumes");
  if (n_pairs < 1) throw ValueError("diversity needs at least one pair");
  std::vector<torch::Tensor> tensors;
  for (const auto& v : volumes) {
    if (v.shape() != volumes.front().shape()) throw ShapeError("diversity inputs must share one shape");
    tensors.push_back(to_tensor(v));
  }
  DiversityReport r;
  r.n_pairs = n_pairs;
  r.seed = seed;
  Rng rng(derive_seed(seed, "diversity-pairs"));
  const auto n = static_cast<std::uint64_t>(volumes.size());
  double sum = 0.0;
  for (std::int64_t k = 0; k < n_pairs; ++k) {
    const auto i = uniform_index(rng, n);
    auto j = uniform_index(rng, n - 1);
    if (j >= i) ++j;
    const auto lo = static_cast<std::int64_t>(std::min(i, j));
    const auto hi = static_cast<std::int64_t>(std::max(i, j));
    const double s = ms_ssim(tensors[static_cast<std::size_t>(lo)], tensors[static_cast<std::size_t>(hi)], params);
    r.pairs.emplace_back(lo, hi);
    r.scores.push_back(s);
    sum += s;
  }
  r.mean = sum / static_cast<double>(n_pairs);
  return r;
}

double dice(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw ShapeError("dice inputs differ in shape");
  auto binary = [](const torch::Tensor& t) {
    const auto d = t.to(torch::kFloat64);
    if (!((d == 0) | (d == 1)).all().item<bool>()) throw ValueError("dice expects binary masks (0 or 1)");
    return d;
  };
  const auto x = binary(a);
  const auto y = binary(b);
  const double sa = x.sum().item<double>();
  const double sb = y.sum().item<double>();
  if (sa + sb == 0.0) return 1.0;
  return 2.0 * (x * y).sum().item<double>() / (sa + sb);
}

double dice(const Volume& a, const Volume& b) { return dice(to_tensor(a), to_tensor(b)); }

}  // namespace latentvol::metrics
