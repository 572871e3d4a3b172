#include "latentvol/ddpm.hpp"

#include <cmath>

#include "latentvol/errors.hpp"
#include "latentvol/nn_util.hpp"
#include "latentvol/random.hpp"

namespace latentvol::ddpm {

std::string_view to_string(ScheduleKind) { return "linear"; }

ScheduleKind parse_schedule_kind(std::string_view s) {
  if (s == "linear") return ScheduleKind::Linear;
  throw ValueError("unknown noise schedule '" + std::string(s) + "'");
}

NoiseSchedule make_schedule(std::int64_t T, double beta_start, double beta_end, ScheduleKind kind) {
  if (T < 1) throw ValueError("diffusion needs at least one timestep");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ValueError("noise schedule requires 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.kind = kind;
  const auto n = static_cast<std::size_t>(T);
  s.beta.resize(n);
  s.alpha.resize(n);
  s.alpha_bar.resize(n);
  s.posterior_var.resize(n);
  double prod = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
    s.beta[i] = beta_start + (beta_end - beta_start) * frac;
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
    const double prev = i == 0 ? 1.0 : s.alpha_bar[i - 1];
    s.posterior_var[i] = s.beta[i] * (1.0 - prev) / (1.0 - s.alpha_bar[i]);
  }
  return s;
}

namespace {

void check_t(std::int64_t t, const NoiseSchedule& s) {
  if (t < 1 || t > s.T) {
    throw ValueError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(s.T) + "]");
  }
}

// [N] per-sample coefficients broadcast against x of rank r.
torch::Tensor per_sample(const std::vector<double>& table, const torch::Tensor& t, const torch::Tensor& like,
                         bool take_sqrt, bool one_minus) {
  std::vector<double> vals;
  const auto tc = t.to(torch::kInt64).contiguous();
  for (std::int64_t i = 0; i < tc.numel(); ++i) {
    const auto ti = tc.data_ptr<std::int64_t>()[i];
    double v = table.at(static_cast<std::size_t>(ti - 1));
    if (one_minus) v = 1.0 - v;
    vals.push_back(take_sqrt ? std::sqrt(v) : v);
  }
  std::vector<std::int64_t> shape(static_cast<std::size_t>(like.dim()), 1);
  shape[0] = tc.numel();
  return torch::tensor(vals, torch::kFloat64).to(like.dtype()).reshape(shape);
}

}  // namespace

torch::Tensor q_sample(const torch::Tensor& x0, std::int64_t t, const torch::Tensor& eps, const NoiseSchedule& s) {
  check_t(t, s);
  if (x0.sizes() != eps.sizes()) throw ShapeError("q_sample noise must match the data shape");
  const double ab = s.alpha_bar_at(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

torch::Tensor q_sample(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                       const NoiseSchedule& s) {
  if (x0.sizes() != eps.sizes()) throw ShapeError("q_sample noise must match the data shape");
  if (t.dim() != 1 || t.size(0) != x0.size(0)) throw ShapeError("q_sample needs one timestep per sample");
  for (std::int64_t i = 0; i < t.size(0); ++i) check_t(t[i].item<std::int64_t>(), s);
  return per_sample(s.alpha_bar, t, x0, true, false) * x0 + per_sample(s.alpha_bar, t, x0, true, true) * eps;
}

torch::Tensor diffusion_loss(const NoisePredictor& net, const torch::Tensor& x0, const NoiseSchedule& s,
                             at::Generator& gen) {
  const auto t = torch::randint(1, s.T + 1, {x0.size(0)}, gen, torch::kInt64);
  const auto eps = torch::randn(x0.sizes(), gen, x0.options());
  const auto pred = net(q_sample(x0, t, eps, s), t);
  if (pred.sizes() != eps.sizes()) throw ShapeError("noise prediction shape differs from its input");
  auto loss = torch::mse_loss(pred, eps);
  require_finite(loss, "diffusion loss");
  return loss;
}

torch::Tensor p_sample_step(const NoisePredictor& net, const torch::Tensor& x_t, std::int64_t t,
                            const NoiseSchedule& s, const torch::Tensor& z) {
  check_t(t, s);
  const auto tt = torch::full({x_t.size(0)}, t, torch::kInt64);
  const auto eps_hat = net(x_t, tt);
  const double beta = s.beta_at(t);
  const double coef = beta / std::sqrt(1.0 - s.alpha_bar_at(t));
  auto mean = (x_t - coef * eps_hat) / std::sqrt(s.alpha_at(t));
  if (t > 1) {
    if (z.sizes() != x_t.sizes()) throw ShapeError("reverse-step noise must match the sample shape");
    mean = mean + std::sqrt(s.posterior_var_at(t)) * z;
  }
  require_finite(mean, "reverse diffusion step at t=" + std::to_string(t));
  return mean;
}

torch::Tensor p_sample_step(const NoisePredictor& net, const torch::Tensor& x_t, std::int64_t t,
                            const NoiseSchedule& s, at::Generator& gen) {
  check_t(t, s);
  const auto z = t > 1 ? torch::randn(x_t.sizes(), gen, x_t.options()) : torch::Tensor();
  return p_sample_step(net, x_t, t, s, z);
}

torch::Tensor sample(const NoisePredictor& net, torch::IntArrayRef shape, const NoiseSchedule& s,
                     std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = torch_generator(seed);
  auto x = torch::randn(shape, gen, torch::kFloat32);
  for (std::int64_t t = s.T; t >= 1; --t) x = p_sample_step(net, x, t, s, gen);
  return x;
}

torch::Tensor sample_batch(const NoisePredictor& net, torch::IntArrayRef sample_shape, const NoiseSchedule& s,
                           const std::vector<std::uint64_t>& seeds) {
  torch::NoGradGuard no_grad;
  std::vector<int64_t> full{static_cast<std::int64_t>(seeds.size())};
  full.insert(full.end(), sample_shape.begin(), sample_shape.end());
  if (seeds.empty()) return torch::empty(full, torch::kFloat32);

  std::vector<at::Generator> gens;
  std::vector<int64_t> one{1};
  one.insert(one.end(), sample_shape.begin(), sample_shape.end());
  std::vector<torch::Tensor> init;
  for (const auto seed : seeds) {
    gens.push_back(torch_generator(seed));
    init.push_back(torch::randn(one, gens.back(), torch::kFloat32));
  }
  auto x = torch::cat(init);
  for (std::int64_t t = s.T; t >= 1; --t) {
    torch::Tensor z;
    if (t > 1) {
      std::vector<torch::Tensor> parts;
      for (auto& g : gens) parts.push_back(torch::randn(one, g, torch::kFloat32));
      z = torch::cat(parts);
    }
    x = p_sample_step(net, x, t, s, z);
  }
  return x;
}

torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim) {
  if (dim < 2 || dim % 2 != 0) throw ValueError("timestep embedding dimension must be even and >= 2");
  const std::int64_t half = dim / 2;
  const auto i = torch::arange(half, torch::kFloat64);
  const auto freqs = torch::exp(-std::log(10000.0) * 2.0 * i / static_cast<double>(dim));
  const auto args = t.to(torch::kFloat64).reshape({-1, 1}) * freqs.unsqueeze(0);
  // Interleave: [sin w0, cos w0, sin w1, cos w1, ...].
  return torch::stack({torch::sin(args), torch::cos(args)}, -1).reshape({t.numel(), dim}).to(torch::kFloat32);
}

std::vector<double> timestep_embedding(double t, std::int64_t dim) {
  if (dim < 2 || dim % 2 != 0) throw ValueError("timestep embedding dimension must be even and >= 2");
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (std::int64_t i = 0; i < dim / 2; ++i) {
    const double w = std::exp(-std::log(10000.0) * 2.0 * static_cast<double>(i) / static_cast<double>(dim));
    out[static_cast<std::size_t>(2 * i)] = std::sin(t * w);
    out[static_cast<std::size_t>(2 * i + 1)] = std::cos(t * w);
  }
  return out;
}

}  // namespace latentvol::ddpm
