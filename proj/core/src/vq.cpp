#include "latentvol/vq.hpp"

#include <algorithm>
#include <cmath>

#include "latentvol/errors.hpp"
#include "latentvol/random.hpp"

namespace latentvol::vq {

namespace {

// Distance rows are built in chunks to bound memory at [chunk, K, d].
constexpr std::int64_t kAssignChunk = 1024;
// Codebooks larger than the shortlist take the matmul path; its distance
// matrix is capped at this many entries per chunk.
constexpr std::int64_t kShortlist = 8;
constexpr std::int64_t kShortlistBudget = std::int64_t{1} << 21;

class StraightThrough : public torch::autograd::Function<StraightThrough> {
 public:
  static torch::Tensor forward(torch::autograd::AutogradContext* /*ctx*/, const torch::Tensor& unquantized,
                               const torch::Tensor& quantized) {
    (void)unquantized;
    return quantized.detach().clone();
  }

  static torch::autograd::variable_list backward(torch::autograd::AutogradContext* /*ctx*/,
                                                 torch::autograd::variable_list grad_output) {
    return {grad_output[0], torch::Tensor()};
  }
};

}  // namespace

Codebook::Codebook(const CodebookOptions& options) : decay_(options.decay), eps_(options.eps) {
  if (options.size < 1 || options.dim < 1) throw ValueError("codebook size and dimension must be >= 1");
  auto gen = torch_generator(derive_seed(options.seed, "codebook-init"));
  const double bound = 1.0 / static_cast<double>(options.size);
  vectors_ = torch::empty({options.size, options.dim}, torch::TensorOptions().dtype(options.dtype))
                 .uniform_(-bound, bound, gen);
  cluster_size_ = torch::ones({options.size}, vectors_.options());
  embed_sum_ = vectors_.clone();
  check_state();
}

Codebook::Codebook(torch::Tensor vectors, double decay, double eps)
    : vectors_(std::move(vectors)), decay_(decay), eps_(eps) {
  if (vectors_.dim() != 2) throw ShapeError("codebook vectors must be a [K, d] matrix");
  vectors_ = vectors_.detach().contiguous();
  cluster_size_ = torch::ones({vectors_.size(0)}, vectors_.options());
  embed_sum_ = vectors_.clone();
  check_state();
}

Codebook::Codebook(torch::Tensor vectors, torch::Tensor cluster_size, torch::Tensor embed_sum, double decay,
                   double eps)
    : vectors_(vectors.detach().contiguous()),
      cluster_size_(cluster_size.detach().contiguous()),
      embed_sum_(embed_sum.detach().contiguous()),
      decay_(decay),
      eps_(eps) {
  check_state();
}

void Codebook::check_state() const {
  if (vectors_.dim() != 2 || vectors_.size(0) < 1 || vectors_.size(1) < 1) {
    throw ShapeError("codebook vectors must be a non-empty [K, d] matrix");
  }
  if (cluster_size_.dim() != 1 || cluster_size_.size(0) != vectors_.size(0)) {
    throw ShapeError("EMA cluster sizes must have one entry per code");
  }
  if (embed_sum_.sizes() != vectors_.sizes()) throw ShapeError("EMA embedding sums must match the codebook shape");
  if (!(decay_ > 0.0 || decay_ == 0.0) || decay_ > 1.0) throw ValueError("codebook decay must lie in [0, 1]");
  if (!(eps_ > 0.0)) throw ValueError("codebook smoothing epsilon must be > 0");
  if (!torch::isfinite(vectors_).all().item<bool>()) throw ValueError("codebook holds non-finite entries");
  if ((cluster_size_ < 0).any().item<bool>()) throw ValueError("EMA cluster sizes must be >= 0");
}

void Codebook::update_ema(const torch::Tensor& latents, const torch::Tensor& assignments) {
  torch::NoGradGuard no_grad;
  if (latents.dim() != 2 || latents.size(1) != dim()) throw ShapeError("EMA latents must be [M, d]");
  if (assignments.dim() != 1 || assignments.size(0) != latents.size(0)) {
    throw ShapeError("EMA assignments must hold one index per latent");
  }
  const auto idx = assignments.to(torch::kInt64);
  if (idx.numel() > 0 && (idx.min().item<std::int64_t>() < 0 || idx.max().item<std::int64_t>() >= size())) {
    throw ValueError("EMA assignment index out of range");
  }
  const auto z = latents.detach().to(vectors_.dtype());
  if (!torch::isfinite(z).all().item<bool>()) throw NumericError("EMA latents contain non-finite values");

  const auto counts = torch::zeros({size()}, vectors_.options()).index_add_(0, idx, torch::ones({idx.size(0)}, vectors_.options()));
  const auto sums = torch::zeros_like(vectors_).index_add_(0, idx, z);

  cluster_size_.mul_(decay_).add_(counts, 1.0 - decay_);
  embed_sum_.mul_(decay_).add_(sums, 1.0 - decay_);

  // Laplace smoothing keeps codes with vanishing counts finite.
  const auto total = cluster_size_.sum();
  const auto smoothed = (cluster_size_ + eps_) / (total + static_cast<double>(size()) * eps_) * total;
  vectors_ = embed_sum_ / smoothed.unsqueeze(1);
}

Codebook Codebook::clone() const {
  return Codebook(vectors_.clone(), cluster_size_.clone(), embed_sum_.clone(), decay_, eps_);
}

namespace {

// First-minimum argmin over exact squared differences for a block of rows.
torch::Tensor exact_argmin(const torch::Tensor& rows, const torch::Tensor& codes) {
  return (rows.unsqueeze(1) - codes.unsqueeze(0)).pow(2).sum(-1).argmin(1);
}

}  // namespace

torch::Tensor assign_codes(const torch::Tensor& vecs, const Codebook& cb) {
  torch::NoGradGuard no_grad;
  if (vecs.dim() != 2 || vecs.size(1) != cb.dim()) {
    throw ShapeError("expected [M, " + std::to_string(cb.dim()) + "] vectors for code assignment");
  }
  const auto rows = vecs.detach().to(cb.vectors().dtype()).contiguous();
  const auto& codes = cb.vectors();
  const std::int64_t k = cb.size();
  if (rows.size(0) == 0) return torch::empty({0}, torch::kInt64);
  if (k <= kShortlist) {
    std::vector<torch::Tensor> parts;
    for (std::int64_t start = 0; start < rows.size(0); start += kAssignChunk) {
      parts.push_back(exact_argmin(rows.narrow(0, start, std::min(kAssignChunk, rows.size(0) - start)), codes));
    }
    return torch::cat(parts);
  }

  // Shortlist with the expanded form in float64, then rescore the shortlist
  // with direct differences. Rows whose shortlist cannot be proven to hold
  // every exact minimizer are rescored against the whole codebook.
  const auto codes64 = codes.to(torch::kFloat64);
  const auto code_sq = codes64.pow(2).sum(1);
  const double code_norm = std::sqrt(code_sq.max().item<double>());
  const double unit = codes.scalar_type() == torch::kFloat64 ? 0x1p-53 : 0x1p-24;
  const double slack = 8.0 * static_cast<double>(cb.dim() + 8) * unit;
  const std::int64_t chunk_rows = std::max<std::int64_t>(1, kShortlistBudget / k);

  std::vector<torch::Tensor> parts;
  for (std::int64_t start = 0; start < rows.size(0); start += chunk_rows) {
    const auto chunk = rows.narrow(0, start, std::min(chunk_rows, rows.size(0) - start));
    const auto x = chunk.to(torch::kFloat64);
    const auto approx = code_sq.unsqueeze(0) - 2.0 * x.matmul(codes64.t());
    const auto [vals, idx] = approx.topk(kShortlist + 1, 1, /*largest=*/false, /*sorted=*/true);
    const auto cand = idx.narrow(1, 0, kShortlist).contiguous();

    const auto picked = codes.index_select(0, cand.reshape(-1)).view({chunk.size(0), kShortlist, cb.dim()});
    const auto dist = (chunk.unsqueeze(1) - picked).pow(2).sum(-1);
    const auto ties = dist == std::get<0>(dist.min(1, /*keepdim=*/true));
    auto best = torch::where(ties, cand, torch::full_like(cand, k)).amin(1);

    const auto x_norm = x.pow(2).sum(1).sqrt();
    const auto bound = slack * (x_norm + code_norm).pow(2);
    const auto unsure = (vals.select(1, kShortlist) - vals.select(1, 0) <= 2.0 * bound).nonzero().view(-1);
    if (unsure.numel() > 0) best.index_put_({unsure}, exact_argmin(chunk.index_select(0, unsure), codes));
    parts.push_back(best);
  }
  return torch::cat(parts);
}

std::int64_t nearest_code(const torch::Tensor& vec, const Codebook& cb) {
  if (vec.dim() != 1 || vec.size(0) != cb.dim()) {
    throw ShapeError("expected a vector of length " + std::to_string(cb.dim()));
  }
  return assign_codes(vec.unsqueeze(0), cb).item<std::int64_t>();
}

torch::Tensor sites_to_rows(const torch::Tensor& grid) {
  if (grid.dim() != 5) throw ShapeError("latent grids must be [N, k, h, w, d]");
  return grid.permute({0, 2, 3, 4, 1}).reshape({-1, grid.size(1)});
}

torch::Tensor rows_to_sites(const torch::Tensor& rows, const torch::IntArrayRef& grid_shape) {
  return rows.reshape({grid_shape[0], grid_shape[2], grid_shape[3], grid_shape[4], grid_shape[1]})
      .permute({0, 4, 1, 2, 3})
      .contiguous();
}

torch::Tensor lookup(const torch::Tensor& indices, const Codebook& cb) {
  if (indices.dim() != 4) throw ShapeError("code index grids must be [N, h, w, d]");
  const auto rows = cb.vectors().index_select(0, indices.reshape({-1}).to(torch::kInt64));
  const std::vector<std::int64_t> shape{indices.size(0), cb.dim(), indices.size(1), indices.size(2), indices.size(3)};
  return rows_to_sites(rows, shape);
}

QuantizeResult quantize(const LatentGrid& latents, const Codebook& cb) {
  if (latents.quantized) throw ValueError("latent grid is already quantized");
  const auto& z = latents.data;
  if (z.dim() != 5) throw ShapeError("latent grids must be [N, k, h, w, d]");
  if (z.size(1) != cb.dim()) {
    throw ShapeError("latent channel count " + std::to_string(z.size(1)) + " does not match codebook dimension " +
                     std::to_string(cb.dim()));
  }
  const auto rows = sites_to_rows(z);
  const auto idx = assign_codes(rows, cb);
  torch::Tensor q;
  {
    torch::NoGradGuard no_grad;
    q = rows_to_sites(cb.vectors().index_select(0, idx).to(z.dtype()), z.sizes());
  }
  QuantizeResult out;
  out.indices = idx.reshape({z.size(0), z.size(2), z.size(3), z.size(4)});
  out.commit_loss = torch::mse_loss(z, q);
  out.quantized = LatentGrid{q, true, latents.compression};
  return out;
}

torch::Tensor straight_through(const torch::Tensor& unquantized, const torch::Tensor& quantized) {
  if (unquantized.sizes() != quantized.sizes()) throw ShapeError("straight-through operands differ in shape");
  return StraightThrough::apply(unquantized, quantized);
}

Codebook ema_update(const Codebook& cb, const torch::Tensor& latents, const torch::Tensor& assignments) {
  Codebook out = cb.clone();
  out.update_ema(latents, assignments);
  return out;
}

Extrema codebook_extrema(const Codebook& cb) {
  const auto& v = cb.vectors();
  if (!torch::isfinite(v).all().item<bool>()) throw ValueError("codebook holds non-finite entries");
  const Extrema ex{v.min().item<double>(), v.max().item<double>()};
  if (!(ex.max > ex.min)) throw ValueError("degenerate codebook: all entries equal");
  return ex;
}

torch::Tensor latent_normalize(const torch::Tensor& z, const Extrema& ex) {
  if (!(ex.max > ex.min)) throw ValueError("latent normalization requires max > min");
  // (z - min) / range lies in [0, 1] for codebook entries, so the result stays in [-1, 1].
  return (z - ex.min) / (ex.max - ex.min) * 2.0 - 1.0;
}

torch::Tensor latent_denormalize(const torch::Tensor& z_norm, const Extrema& ex) {
  if (!(ex.max > ex.min)) throw ValueError("latent normalization requires max > min");
  // Convex-combination form: u = 0 gives min and u = 1 gives max exactly.
  const auto u = (z_norm + 1.0) / 2.0;
  return (1.0 - u) * ex.min + u * ex.max;
}

double overflow_fraction(const torch::Tensor& z_norm) {
  if (z_norm.numel() == 0) return 0.0;
  return (z_norm.abs() > 1.0).to(torch::kFloat64).mean().item<double>();
}

}  // namespace latentvol::vq
