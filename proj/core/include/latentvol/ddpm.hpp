#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace latentvol::ddpm {

enum class ScheduleKind { Linear };

std::string_view to_string(ScheduleKind k);
ScheduleKind parse_schedule_kind(std::string_view s);

/// Variance schedule of the forward Markov chain. Vectors are indexed by
/// t - 1 for t in [1, T]; use the accessors for 1-based lookups.
struct NoiseSchedule {
  std::int64_t T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  ScheduleKind kind = ScheduleKind::Linear;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  /// beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t); zero at t = 1.
  std::vector<double> posterior_var;

  [[nodiscard]] double beta_at(std::int64_t t) const { return beta.at(static_cast<std::size_t>(t - 1)); }
  [[nodiscard]] double alpha_at(std::int64_t t) const { return alpha.at(static_cast<std::size_t>(t - 1)); }
  [[nodiscard]] double alpha_bar_at(std::int64_t t) const { return alpha_bar.at(static_cast<std::size_t>(t - 1)); }
  [[nodiscard]] double posterior_var_at(std::int64_t t) const {
    return posterior_var.at(static_cast<std::size_t>(t - 1));
  }
};

/// Linear beta ramp from beta_start (t = 1) to beta_end (t = T).
/// Throws ValueError unless T >= 1 and 0 < beta_start <= beta_end < 1.
NoiseSchedule make_schedule(std::int64_t T = 300, double beta_start = 1e-4, double beta_end = 0.02,
                            ScheduleKind kind = ScheduleKind::Linear);

/// eps-prediction network: (x_t [N, ...], t [N] int64) -> eps_hat with the shape of x_t.
using NoisePredictor = std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>;

/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps for a single timestep.
torch::Tensor q_sample(const torch::Tensor& x0, std::int64_t t, const torch::Tensor& eps, const NoiseSchedule& s);

/// Per-sample timesteps, t holds one int64 entry per batch element.
torch::Tensor q_sample(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                       const NoiseSchedule& s);

/// Draws t ~ U{1..T} per sample and eps ~ N(0, I), returns mean (eps - net(x_t, t))^2.
/// Differentiable in the network parameters. Throws NumericError on a non-finite result.
torch::Tensor diffusion_loss(const NoisePredictor& net, const torch::Tensor& x0, const NoiseSchedule& s,
                             at::Generator& gen);

/// One ancestral step x_t -> x_{t-1} with an explicit standard-normal draw `z`
/// (ignored at t = 1, where the mean is returned).
torch::Tensor p_sample_step(const NoisePredictor& net, const torch::Tensor& x_t, std::int64_t t,
                            const NoiseSchedule& s, const torch::Tensor& z);

/// As above, drawing z from `gen` (no draw is taken at t = 1).
torch::Tensor p_sample_step(const NoisePredictor& net, const torch::Tensor& x_t, std::int64_t t,
                            const NoiseSchedule& s, at::Generator& gen);

/// Full reverse chain from x_T ~ N(0, I) of the given shape; deterministic in seed.
torch::Tensor sample(const NoisePredictor& net, torch::IntArrayRef shape, const NoiseSchedule& s,
                     std::uint64_t seed);

/// Batched reverse chain where sample i draws all of its noise from its own
/// seed; row i equals sample(net, shape, s, seeds[i]) up to batching effects in the net.
torch::Tensor sample_batch(const NoisePredictor& net, torch::IntArrayRef sample_shape, const NoiseSchedule& s,
                           const std::vector<std::uint64_t>& seeds);

/// Sinusoidal embedding with interleaved components: entry 2i is
/// sin(t w_i), entry 2i + 1 is cos(t w_i), w_i = 10000^(-2i / dim).
/// t is [N] (any numeric dtype); returns [N, dim] float32. Throws ValueError for odd dim.
torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim);
std::vector<double> timestep_embedding(double t, std::int64_t dim);

}  // namespace latentvol::ddpm
