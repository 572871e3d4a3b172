#include "latentvol/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "latentvol/checkpoint.hpp"
#include "latentvol/errors.hpp"
#include "latentvol/metrics.hpp"
#include "latentvol/nn_util.hpp"
#include "latentvol/phantom.hpp"

namespace latentvol::transfer {
namespace F = torch::nn::functional;
namespace {

torch::nn::Conv3d conv3(std::int64_t in, std::int64_t out, std::int64_t stride) {
  return torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, 3).stride(stride).padding(1));
}

void check_divisible(Shape3 s, const SegModelOptions& o) {
  const std::int64_t f = std::int64_t{1} << o.levels;
  if (s.h % f || s.w % f || s.d % f) {
    throw ShapeError("segmenter input " + s.str() + " must be divisible by " + std::to_string(f));
  }
}

void check_options(const SegModelOptions& o) {
  if (o.base_channels < 1 || o.levels < 1) throw ValueError("segmenter needs base_channels >= 1 and levels >= 1");
}

std::int64_t width(const SegModelOptions& o, std::int64_t level) { return o.base_channels << level; }

nlohmann::json options_json(const SegModelOptions& o) {
  return {{"base_channels", o.base_channels}, {"levels", o.levels}};
}

SegModelOptions options_from(const nlohmann::json& j) {
  SegModelOptions o;
  o.base_channels = j.at("base_channels").get<std::int64_t>();
  o.levels = j.at("levels").get<std::int64_t>();
  check_options(o);
  return o;
}

// Soft Dice per sample, averaged over the batch.
torch::Tensor soft_dice_loss(const torch::Tensor& logits, const torch::Tensor& target) {
  const auto p = torch::sigmoid(logits).flatten(1);
  const auto y = target.flatten(1);
  const double eps = 1.0;
  const auto num = 2.0 * (p * y).sum(1) + eps;
  const auto den = p.sum(1) + y.sum(1) + eps;
  return (1.0 - num / den).mean();
}

}  // namespace

ConvBlockImpl::ConvBlockImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t stride) {
  conv1_ = register_module("conv1", conv3(in_ch, out_ch, stride));
  norm1_ = register_module("norm1", torch::nn::GroupNorm(norm_groups(out_ch), out_ch));
  conv2_ = register_module("conv2", conv3(out_ch, out_ch, 1));
  norm2_ = register_module("norm2", torch::nn::GroupNorm(norm_groups(out_ch), out_ch));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  auto h = F::silu(norm1_(conv1_(x)));
  return F::silu(norm2_(conv2_(h)));
}

SegEncoderImpl::SegEncoderImpl(const SegModelOptions& options) {
  check_options(options);
  blocks_.push_back(register_module("block0", ConvBlock(1, width(options, 0), 1)));
  for (std::int64_t l = 1; l <= options.levels; ++l) {
    blocks_.push_back(
        register_module("block" + std::to_string(l), ConvBlock(width(options, l - 1), width(options, l), 2)));
  }
}

std::vector<torch::Tensor> SegEncoderImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> feats;
  auto h = x;
  for (auto& b : blocks_) {
    h = b(h);
    feats.push_back(h);
  }
  return feats;
}

SegModelImpl::SegModelImpl(const SegModelOptions& options) : options_(options) {
  encoder_ = register_module("encoder", SegEncoder(options));
  for (std::int64_t l = options.levels; l >= 1; --l) {
    up_blocks_.push_back(register_module("up" + std::to_string(l),
                                         ConvBlock(width(options, l) + width(options, l - 1), width(options, l - 1), 1)));
  }
  head_ = register_module("head", torch::nn::Conv3d(torch::nn::Conv3dOptions(width(options, 0), 1, 1)));
}

torch::Tensor SegModelImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 5 || x.size(1) != 1) throw ShapeError("segmenter expects [N, 1, H, W, D] input");
  check_divisible({x.size(2), x.size(3), x.size(4)}, options_);
  auto feats = encoder_(x);
  auto h = feats.back();
  for (std::size_t i = 0; i < up_blocks_.size(); ++i) {
    const auto& skip = feats[feats.size() - 2 - i];
    h = F::interpolate(h, F::InterpolateFuncOptions()
                              .size(std::vector<std::int64_t>{skip.size(2), skip.size(3), skip.size(4)})
                              .mode(torch::kNearest));
    h = up_blocks_[i](torch::cat({h, skip}, 1));
  }
  return head_(h);
}

EncoderWeights encoder_weights(SegModel& model) { return snapshot_parameters(*model->encoder()); }

void load_encoder_weights(SegModel& model, const EncoderWeights& weights) {
  load_parameters(*model->encoder(), weights);
}

void save_encoder(const EncoderWeights& weights, const SegModelOptions& options, const std::filesystem::path& file) {
  pipeline::Checkpoint c;
  c.stage = "encoder";
  c.meta = {{"options", options_json(options)}};
  for (const auto& [name, t] : weights) c.add(name, t);
  pipeline::save_checkpoint(c, file);
}

std::pair<EncoderWeights, SegModelOptions> load_encoder(const std::filesystem::path& file) {
  const auto c = pipeline::load_checkpoint(file);
  if (c.stage != "encoder") throw ConfigError(file.string() + " is not an encoder checkpoint");
  auto options = options_from(c.meta.at("options"));
  // Validate names and shapes against a freshly built encoder.
  SegModel probe(options);
  load_encoder_weights(probe, c.sections);
  return {c.sections, options};
}

void save_seg_model(SegModel& model, const SegModelMeta& meta, const std::filesystem::path& file) {
  pipeline::Checkpoint c;
  c.stage = "segmenter";
  c.meta = {{"options", options_json(model->options())},
            {"fraction", meta.fraction},
            {"pretrained", meta.pretrained}};
  for (const auto& [name, t] : snapshot_parameters(*model)) c.add(name, t);
  pipeline::save_checkpoint(c, file);
}

std::pair<SegModel, SegModelMeta> load_seg_model(const std::filesystem::path& file) {
  const auto c = pipeline::load_checkpoint(file);
  if (c.stage != "segmenter") throw ConfigError(file.string() + " is not a segmenter checkpoint");
  SegModel model(options_from(c.meta.at("options")));
  load_parameters(*model, c.sections);
  model->eval();
  SegModelMeta meta{c.meta.at("fraction").get<double>(), c.meta.at("pretrained").get<bool>()};
  return {model, meta};
}

Corruption mask_corrupt(const Volume& v, double mask_ratio, Shape3 patch, Rng& rng) {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ValueError("mask ratio must lie in (0, 1)");
  const auto s = v.shape();
  if (patch.h < 1 || patch.w < 1 || patch.d < 1 || s.h % patch.h || s.w % patch.w || s.d % patch.d) {
    throw ShapeError("patch " + patch.str() + " does not tile volume " + s.str());
  }
  const Shape3 grid{s.h / patch.h, s.w / patch.w, s.d / patch.d};
  const auto n = grid.numel();
  const auto k = std::clamp<std::int64_t>(std::llround(mask_ratio * static_cast<double>(n)), 0, n);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  shuffle(std::span<std::int64_t>(order), rng);

  std::vector<float> data(v.data().begin(), v.data().end());
  std::vector<float> mask(data.size(), 0.0f);
  for (std::int64_t i = 0; i < k; ++i) {
    const auto p = order[static_cast<std::size_t>(i)];
    const auto ph = p / (grid.w * grid.d);
    const auto pw = (p / grid.d) % grid.w;
    const auto pd = p % grid.d;
    for (std::int64_t h = ph * patch.h; h < (ph + 1) * patch.h; ++h) {
      for (std::int64_t w = pw * patch.w; w < (pw + 1) * patch.w; ++w) {
        for (std::int64_t d = pd * patch.d; d < (pd + 1) * patch.d; ++d) {
          const auto idx = static_cast<std::size_t>(v.index(h, w, d));
          data[idx] = 0.0f;
          mask[idx] = 1.0f;
        }
      }
    }
  }
  return {v.with_data(std::move(data)), v, v.with_data(std::move(mask)), k, n};
}

PretrainResult pretrain(const SegModelOptions& options, const std::vector<Volume>& synthetic,
                        const PretrainConfig& cfg) {
  if (synthetic.empty()) throw ValueError("pretraining needs at least one volume");
  const auto shape = synthetic.front().shape();
  for (const auto& v : synthetic) {
    if (v.shape() != shape) throw ValueError("pretraining volumes must share one shape");
  }
  check_options(options);
  check_divisible(shape, options);
  if (cfg.steps < 1 || cfg.batch < 1) throw ValueError("pretraining needs steps >= 1 and batch >= 1");
  if (!(cfg.heldout_fraction >= 0.0 && cfg.heldout_fraction < 1.0)) {
    throw ValueError("held-out fraction must lie in [0, 1)");
  }

  // Held-out split.
  std::vector<std::size_t> order(synthetic.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(cfg.seed, "pretrain-split"));
  shuffle(std::span<std::size_t>(order), split_rng);
  std::size_t n_held = 0;
  if (synthetic.size() >= 2 && cfg.heldout_fraction > 0.0) {
    n_held = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(cfg.heldout_fraction * static_cast<double>(synthetic.size()))), 1,
        synthetic.size() - 1);
  }
  std::vector<std::size_t> held(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_held));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_held), order.end());
  if (held.empty()) held = train;

  std::vector<Corruption> held_corruptions;
  for (std::size_t i = 0; i < held.size(); ++i) {
    Rng rng(derive_seed(derive_seed(cfg.seed, "pretrain-heldout"), i));
    held_corruptions.push_back(mask_corrupt(synthetic[held[i]], cfg.mask_ratio, cfg.patch, rng));
  }

  torch::manual_seed(derive_seed(cfg.seed, "pretrain-init"));
  SegModel model(options);
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(cfg.lr));

  auto masked_mse = [](const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& mask) {
    return ((pred - target).pow(2) * mask).sum() / mask.sum().clamp_min(1.0);
  };
  auto heldout_loss = [&] {
    torch::NoGradGuard ng;
    model->eval();
    double sum = 0.0;
    for (const auto& c : held_corruptions) {
      const auto x = to_tensor(c.corrupted).unsqueeze(0).unsqueeze(0);
      const auto pred = model(x);
      sum += masked_mse(pred, to_tensor(c.target).unsqueeze(0).unsqueeze(0), to_tensor(c.mask).unsqueeze(0).unsqueeze(0))
                 .item<double>();
    }
    model->train();
    return sum / static_cast<double>(held_corruptions.size());
  };

  PretrainResult r;
  r.heldout_before = heldout_loss();
  const auto order_seed = derive_seed(cfg.seed, "pretrain-order");
  const auto mask_seed = derive_seed(cfg.seed, "pretrain-mask");
  model->train();
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<torch::Tensor> xs, ys, ms;
    for (std::int64_t b = 0; b < cfg.batch; ++b) {
      const auto pos = static_cast<std::uint64_t>(step * cfg.batch + b);
      const auto idx = train[epoch_order_index(order_seed, pos, train.size())];
      Rng rng(derive_seed(mask_seed, pos));
      const auto c = mask_corrupt(synthetic[idx], cfg.mask_ratio, cfg.patch, rng);
      xs.push_back(to_tensor(c.corrupted).unsqueeze(0));
      ys.push_back(to_tensor(c.target).unsqueeze(0));
      ms.push_back(to_tensor(c.mask).unsqueeze(0));
    }
    const auto loss = masked_mse(model(torch::stack(xs)), torch::stack(ys), torch::stack(ms));
    require_finite(loss, "pretraining loss");
    opt.zero_grad();
    loss.backward();
    opt.step();
    r.losses.push_back(loss.item<double>());
  }
  r.heldout_after = heldout_loss();
  r.encoder = encoder_weights(model);
  return r;
}

std::vector<std::size_t> select_fraction(const std::vector<LabeledCase>& cases, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValueError("fraction must lie in (0, 1]");
  std::vector<std::string> patients;
  std::set<std::string> seen;
  for (const auto& c : cases) {
    if (seen.insert(c.patient_id).second) patients.push_back(c.patient_id);
  }
  std::sort(patients.begin(), patients.end());
  Rng rng(derive_seed(seed, "fraction-patients"));
  shuffle(std::span<std::string>(patients), rng);
  const auto keep = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(patients.size()) + 1e-9));
  if (keep == 0) {
    throw ValueError("fraction " + std::to_string(fraction) + " of " + std::to_string(patients.size()) +
                     " patients selects nobody");
  }
  const std::set<std::string> chosen(patients.begin(), patients.begin() + static_cast<std::ptrdiff_t>(keep));
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (chosen.count(cases[i].patient_id)) out.push_back(i);
  }
  return out;
}

FinetuneResult finetune(const SegModelOptions& options, const std::vector<LabeledCase>& train, double fraction,
                        const std::optional<EncoderWeights>& encoder_init, const FinetuneConfig& cfg,
                        const std::function<void(std::int64_t, double)>& on_epoch) {
  if (train.empty()) throw ValueError("fine-tuning needs labeled cases");
  if (cfg.steps < 1 || cfg.batch < 1) throw ValueError("fine-tuning needs steps >= 1 and batch >= 1");
  for (const auto& c : train) {
    if (c.image.shape() != train.front().image.shape() || c.mask.shape() != c.image.shape()) {
      throw ShapeError("labeled cases must share one shape with matching masks");
    }
  }
  check_options(options);
  check_divisible(train.front().image.shape(), options);

  FinetuneResult r;
  r.subset = select_fraction(train, fraction, cfg.seed);
  torch::manual_seed(derive_seed(cfg.seed, "seg-init"));
  r.model = SegModel(options);
  if (encoder_init) load_encoder_weights(r.model, *encoder_init);
  torch::optim::Adam opt(r.model->parameters(), torch::optim::AdamOptions(cfg.lr));

  const auto n = r.subset.size();
  const auto steps_per_epoch = static_cast<std::int64_t>((n + static_cast<std::size_t>(cfg.batch) - 1) /
                                                         static_cast<std::size_t>(cfg.batch));
  const auto order_seed = derive_seed(cfg.seed, "finetune-order");
  const auto flip_seed = derive_seed(cfg.seed, "finetune-flip");
  double epoch_sum = 0.0;
  std::int64_t epoch_count = 0;
  r.model->train();
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<torch::Tensor> xs, ys;
    for (std::int64_t b = 0; b < cfg.batch; ++b) {
      const auto pos = static_cast<std::uint64_t>(step * cfg.batch + b);
      const auto& c = train[r.subset[epoch_order_index(order_seed, pos, n)]];
      Rng rng(derive_seed(flip_seed, pos));
      auto x = to_tensor(c.image);
      auto y = to_tensor(c.mask);
      if (bernoulli(rng, 0.5)) {
        x = x.flip({0});
        y = y.flip({0});
      }
      xs.push_back(x.unsqueeze(0));
      ys.push_back(y.unsqueeze(0));
    }
    const auto x = torch::stack(xs);
    const auto y = torch::stack(ys);
    const auto logits = r.model(x);
    const auto loss = soft_dice_loss(logits, y) + F::binary_cross_entropy_with_logits(logits, y);
    require_finite(loss, "fine-tuning loss");
    opt.zero_grad();
    loss.backward();
    opt.step();
    r.losses.push_back(loss.item<double>());

    {
      torch::NoGradGuard ng;
      const auto pred = (logits.detach() > 0).to(torch::kFloat32);
      for (std::int64_t b = 0; b < pred.size(0); ++b) {
        epoch_sum += metrics::dice(pred[b], y[b]);
        ++epoch_count;
      }
    }
    if ((step + 1) % steps_per_epoch == 0 || step + 1 == cfg.steps) {
      const double d = epoch_sum / static_cast<double>(epoch_count);
      r.epoch_dice.push_back(d);
      if (on_epoch) on_epoch(static_cast<std::int64_t>(r.epoch_dice.size()), d);
      epoch_sum = 0.0;
      epoch_count = 0;
    }
  }
  r.model->eval();
  return r;
}

EvalReport evaluate_predictor(const SegPredictor& predict, const std::vector<LabeledCase>& test) {
  if (test.empty()) throw ValueError("evaluation needs at least one case");
  EvalReport r;
  for (const auto& c : test) {
    const auto logits = predict(c.image);
    const auto pred = (logits > 0).to(torch::kFloat32);
    r.per_case.push_back(metrics::dice(pred, to_tensor(c.mask)));
  }
  r.mean_dice = std::accumulate(r.per_case.begin(), r.per_case.end(), 0.0) / static_cast<double>(r.per_case.size());
  return r;
}

EvalReport evaluate_seg(SegModel& model, const std::vector<LabeledCase>& test) {
  model->eval();
  return evaluate_predictor(
      [&](const Volume& v) {
        torch::NoGradGuard ng;
        return model(to_tensor(v).unsqueeze(0).unsqueeze(0))[0][0];
      },
      test);
}

std::vector<LabeledCase> labeled_phantoms(std::size_t count, std::uint64_t seed, Shape3 shape) {
  std::vector<LabeledCase> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    PhantomSpec spec;
    spec.seed = derive_seed(derive_seed(seed, "labeled-phantom"), i);
    spec.shape = shape;
    spec.background = -0.3;
    spec.intensity_bands = {{0.0, 0.3}, {-0.1, 0.2}};
    spec.noise_sigma = 0.2;
    auto p = generate_phantom(spec);
    out.push_back({std::move(p.volume), std::move(p.mask), "case-" + std::to_string(i)});
  }
  return out;
}

}  // namespace latentvol::transfer
