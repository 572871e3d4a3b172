#include "latentvol/config.hpp"

#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "latentvol/errors.hpp"
#include "latentvol/toml.hpp"

namespace latentvol::pipeline {
namespace {

using nlohmann::json;

std::string axis_name(Axis a) {
  switch (a) {
    case Axis::Height: return "height";
    case Axis::Width: return "width";
    case Axis::Depth: return "depth";
  }
  return "height";
}

bool is_power_of_two(std::int64_t v) { return v >= 1 && (v & (v - 1)) == 0; }

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid config: " + what);
}

// Overlays `patch` onto `base`, rejecting unknown keys and type changes.
void merge(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config section '" + where + "' must be a table");
  for (const auto& [k, v] : patch.items()) {
    const std::string key = where.empty() ? k : where + "." + k;
    if (!base.contains(k)) throw ConfigError("unknown config key '" + key + "'");
    json& slot = base[k];
    if (slot.is_object()) {
      merge(slot, v, key);
    } else if (slot.is_number_float() && v.is_number()) {
      slot = v.get<double>();
    } else if (slot.is_number_integer() && v.is_number_integer()) {
      slot = v;
    } else if (slot.is_array() && v.is_array()) {
      for (const auto& e : v) {
        if (!e.is_number_integer()) throw ConfigError("config key '" + key + "' expects integers");
      }
      slot = v;
    } else if ((slot.is_string() && v.is_string()) || (slot.is_boolean() && v.is_boolean())) {
      slot = v;
    } else {
      throw ConfigError("config key '" + key + "' has the wrong type (expected " + std::string(slot.type_name()) +
                        ", got " + std::string(v.type_name()) + ")");
    }
  }
}

Shape3 shape_from(const json& j, const std::string& key) {
  require(j.is_array() && j.size() == 3, key + " must have three entries");
  return {j[0].get<std::int64_t>(), j[1].get<std::int64_t>(), j[2].get<std::int64_t>()};
}

ExperimentConfig decode(const json& j) {
  ExperimentConfig c;
  try {
    c.name = j.at("name").get<std::string>();
    const auto& d = j.at("data");
    c.data.image_size = shape_from(d.at("image_size"), "data.image_size");
    c.data.modality = parse_modality(d.at("modality").get<std::string>());
    c.data.flip_axis = parse_axis(d.at("flip_axis").get<std::string>());
    c.data.flip_probability = d.at("flip_probability").get<double>();

    const auto& v = j.at("vqgan");
    const auto s = shape_from(v.at("compression"), "vqgan.compression");
    c.vqgan.compression = {s.h, s.w, s.d};
    c.vqgan.codebook_size = v.at("codebook_size").get<std::int64_t>();
    c.vqgan.codebook_dim = v.at("codebook_dim").get<std::int64_t>();
    c.vqgan.codebook_decay = v.at("codebook_decay").get<double>();
    c.vqgan.codebook_eps = v.at("codebook_eps").get<double>();
    c.vqgan.lr = v.at("lr").get<double>();
    c.vqgan.iters = v.at("iters").get<std::int64_t>();
    c.vqgan.batch = v.at("batch").get<std::int64_t>();
    c.vqgan.base_channels = v.at("base_channels").get<std::int64_t>();
    c.vqgan.channel_mult = v.at("channel_mult").get<std::vector<std::int64_t>>();
    c.vqgan.res_blocks = v.at("res_blocks").get<std::int64_t>();
    c.vqgan.disc_channels = v.at("disc_channels").get<std::int64_t>();
    c.vqgan.disc_layers = v.at("disc_layers").get<std::int64_t>();
    const auto& w = v.at("loss");
    c.vqgan.w_recon = w.at("recon").get<double>();
    c.vqgan.w_commit = w.at("commit").get<double>();
    c.vqgan.w_gan_slice = w.at("gan_slice").get<double>();
    c.vqgan.w_gan_volume = w.at("gan_volume").get<double>();
    c.vqgan.w_feat_slice = w.at("feat_slice").get<double>();
    c.vqgan.w_feat_volume = w.at("feat_volume").get<double>();
    c.vqgan.warmup_fraction = w.at("warmup_fraction").get<double>();
    c.vqgan.adaptive_adversarial = w.at("adaptive_adversarial").get<bool>();

    const auto& f = j.at("diffusion");
    c.diffusion.lr = f.at("lr").get<double>();
    c.diffusion.iters = f.at("iters").get<std::int64_t>();
    c.diffusion.batch = f.at("batch").get<std::int64_t>();
    c.diffusion.accumulation_steps = f.at("accumulation_steps").get<std::int64_t>();
    c.diffusion.timesteps = f.at("timesteps").get<std::int64_t>();
    c.diffusion.beta_start = f.at("beta_start").get<double>();
    c.diffusion.beta_end = f.at("beta_end").get<double>();
    c.diffusion.base_channels = f.at("base_channels").get<std::int64_t>();
    c.diffusion.channel_mult = f.at("channel_mult").get<std::vector<std::int64_t>>();
    c.diffusion.res_blocks = f.at("res_blocks").get<std::int64_t>();
    c.diffusion.heads = f.at("heads").get<std::int64_t>();
    c.diffusion.attention_levels = f.at("attention_levels").get<std::int64_t>();
    c.diffusion.grad_clip = f.at("grad_clip").get<double>();
    c.diffusion.ema = f.at("ema").get<bool>();
    c.diffusion.ema_decay = f.at("ema_decay").get<double>();

    const auto& r = j.at("run");
    c.run.seed = r.at("seed").get<std::uint64_t>();
    c.run.checkpoint_every = r.at("checkpoint_every").get<std::int64_t>();
    c.run.cache_voxels = r.at("cache_voxels").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const ValueError& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace

void ExperimentConfig::validate() const {
  const auto& sz = data.image_size;
  const auto& s = vqgan.compression;
  for (int a = 0; a < 3; ++a) {
    require(sz[a] >= 1, "data.image_size entries must be >= 1");
    require(is_power_of_two(s[a]), "vqgan.compression entries must be powers of two");
    require(sz[a] % s[a] == 0, "data.image_size " + sz.str() + " is not divisible by vqgan.compression along axis " +
                                   std::to_string(a));
  }
  require(data.flip_probability >= 0.0 && data.flip_probability <= 1.0, "data.flip_probability must lie in [0, 1]");

  require(vqgan.codebook_size >= 1 && vqgan.codebook_dim >= 1, "codebook size and dimension must be >= 1");
  require(vqgan.codebook_decay >= 0.0 && vqgan.codebook_decay <= 1.0, "vqgan.codebook_decay must lie in [0, 1]");
  require(vqgan.codebook_eps > 0.0, "vqgan.codebook_eps must be > 0");
  require(vqgan.lr > 0.0, "vqgan.lr must be > 0");
  require(vqgan.iters >= 1 && vqgan.batch >= 1, "vqgan.iters and vqgan.batch must be >= 1");
  require(vqgan.base_channels >= 1 && vqgan.res_blocks >= 1, "vqgan widths must be >= 1");
  require(!vqgan.channel_mult.empty(), "vqgan.channel_mult must not be empty");
  for (auto m : vqgan.channel_mult) require(m >= 1, "vqgan.channel_mult entries must be >= 1");
  require(vqgan.disc_channels >= 1 && vqgan.disc_layers >= 1, "discriminator widths must be >= 1");
  for (double w : {vqgan.w_recon, vqgan.w_commit, vqgan.w_gan_slice, vqgan.w_gan_volume, vqgan.w_feat_slice,
                   vqgan.w_feat_volume}) {
    require(w >= 0.0, "vqgan.loss weights must be >= 0");
  }
  require(vqgan.warmup_fraction >= 0.0 && vqgan.warmup_fraction <= 1.0, "vqgan.loss.warmup_fraction must lie in [0, 1]");

  const auto& f = diffusion;
  require(f.lr > 0.0, "diffusion.lr must be > 0");
  require(f.iters >= 1 && f.batch >= 1 && f.accumulation_steps >= 1, "diffusion counts must be >= 1");
  require(f.timesteps >= 1, "diffusion.timesteps must be >= 1");
  require(f.beta_start > 0.0 && f.beta_start <= f.beta_end && f.beta_end < 1.0,
          "diffusion betas must satisfy 0 < beta_start <= beta_end < 1");
  require(f.base_channels >= 1 && f.res_blocks >= 1 && f.heads >= 1, "diffusion widths must be >= 1");
  require(!f.channel_mult.empty(), "diffusion.channel_mult must not be empty");
  for (auto m : f.channel_mult) {
    require(m >= 1, "diffusion.channel_mult entries must be >= 1");
    require((f.base_channels * m) % f.heads == 0, "diffusion channels must be divisible by diffusion.heads");
  }
  const auto levels = static_cast<std::int64_t>(f.channel_mult.size());
  require(f.attention_levels >= 0 && f.attention_levels <= levels, "diffusion.attention_levels out of range");
  const auto lat = latent_shape();
  const std::int64_t factor = std::int64_t{1} << (levels - 1);
  require(lat.h % factor == 0 && lat.w % factor == 0,
          "latent plane " + std::to_string(lat.h) + "x" + std::to_string(lat.w) + " is not divisible by " +
              std::to_string(factor) + " as required by diffusion.channel_mult");
  require(f.grad_clip > 0.0, "diffusion.grad_clip must be > 0");
  require(f.ema_decay >= 0.0 && f.ema_decay < 1.0, "diffusion.ema_decay must lie in [0, 1)");
  require(run.checkpoint_every >= 1, "run.checkpoint_every must be >= 1");
  require(run.cache_voxels >= 0, "run.cache_voxels must be >= 0");
}

Shape3 ExperimentConfig::latent_shape() const {
  return {data.image_size.h / vqgan.compression.h, data.image_size.w / vqgan.compression.w,
          data.image_size.d / vqgan.compression.d};
}

std::vector<std::string> preset_names() { return {"mrnet", "adni", "duke", "lidc", "desk"}; }

ExperimentConfig preset(std::string_view name) {
  ExperimentConfig c;
  c.name = std::string(name);
  if (name == "mrnet" || name == "duke") {
    c.diffusion.batch = 40;
  } else if (name == "adni") {
    c.data.image_size = {64, 64, 64};
    c.vqgan.compression = {2, 2, 2};
    c.diffusion.batch = 10;
  } else if (name == "lidc") {
    c.data.image_size = {128, 128, 128};
    c.data.modality = Modality::CT;
    c.diffusion.batch = 50;
  } else if (name == "desk") {
    c.data.image_size = {16, 16, 8};
    c.vqgan.compression = {2, 2, 2};
    c.vqgan.codebook_size = 512;
    c.vqgan.iters = 2000;
    c.vqgan.batch = 4;
    c.vqgan.base_channels = 16;
    c.diffusion.iters = 500;
    c.diffusion.batch = 8;
    c.run.checkpoint_every = 500;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "'");
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  const auto& s = c.vqgan.compression;
  const auto& sz = c.data.image_size;
  return json{
      {"name", c.name},
      {"data",
       {{"image_size", {sz.h, sz.w, sz.d}},
        {"modality", std::string(to_string(c.data.modality))},
        {"flip_axis", axis_name(c.data.flip_axis)},
        {"flip_probability", c.data.flip_probability}}},
      {"vqgan",
       {{"compression", {s.h, s.w, s.d}},
        {"codebook_size", c.vqgan.codebook_size},
        {"codebook_dim", c.vqgan.codebook_dim},
        {"codebook_decay", c.vqgan.codebook_decay},
        {"codebook_eps", c.vqgan.codebook_eps},
        {"lr", c.vqgan.lr},
        {"iters", c.vqgan.iters},
        {"batch", c.vqgan.batch},
        {"base_channels", c.vqgan.base_channels},
        {"channel_mult", c.vqgan.channel_mult},
        {"res_blocks", c.vqgan.res_blocks},
        {"disc_channels", c.vqgan.disc_channels},
        {"disc_layers", c.vqgan.disc_layers},
        {"loss",
         {{"recon", c.vqgan.w_recon},
          {"commit", c.vqgan.w_commit},
          {"gan_slice", c.vqgan.w_gan_slice},
          {"gan_volume", c.vqgan.w_gan_volume},
          {"feat_slice", c.vqgan.w_feat_slice},
          {"feat_volume", c.vqgan.w_feat_volume},
          {"warmup_fraction", c.vqgan.warmup_fraction},
          {"adaptive_adversarial", c.vqgan.adaptive_adversarial}}}}},
      {"diffusion",
       {{"lr", c.diffusion.lr},
        {"iters", c.diffusion.iters},
        {"batch", c.diffusion.batch},
        {"accumulation_steps", c.diffusion.accumulation_steps},
        {"timesteps", c.diffusion.timesteps},
        {"beta_start", c.diffusion.beta_start},
        {"beta_end", c.diffusion.beta_end},
        {"base_channels", c.diffusion.base_channels},
        {"channel_mult", c.diffusion.channel_mult},
        {"res_blocks", c.diffusion.res_blocks},
        {"heads", c.diffusion.heads},
        {"attention_levels", c.diffusion.attention_levels},
        {"grad_clip", c.diffusion.grad_clip},
        {"ema", c.diffusion.ema},
        {"ema_decay", c.diffusion.ema_decay}}},
      {"run",
       {{"seed", c.run.seed}, {"checkpoint_every", c.run.checkpoint_every}, {"cache_voxels", c.run.cache_voxels}}},
  };
}

ExperimentConfig from_json(const nlohmann::json& j, const ExperimentConfig& base) {
  json full = to_json(base);
  merge(full, j, "");
  return decode(full);
}

ExperimentConfig from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a table");
  ExperimentConfig base = preset("mrnet");
  if (j.contains("name")) {
    if (!j["name"].is_string()) throw ConfigError("config key 'name' must be a string");
    const auto n = j["name"].get<std::string>();
    for (const auto& p : preset_names()) {
      if (p == n) base = preset(n);
    }
  }
  return from_json(j, base);
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(toml::parse(ss.str()));
}

std::string to_toml(const ExperimentConfig& cfg) { return toml::dump(to_json(cfg)); }

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write config file " + file.string());
  out << to_toml(cfg);
}

ExperimentConfig apply_overrides(const ExperimentConfig& cfg, const std::vector<std::string>& overrides) {
  json patch = json::object();
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    const auto key = o.substr(0, eq);
    json* node = &patch;
    std::size_t start = 0;
    for (;;) {
      const auto dot = key.find('.', start);
      const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
      if (dot == std::string::npos) {
        (*node)[part] = toml::parse_value(o.substr(eq + 1), true);
        break;
      }
      node = &(*node)[part];
      if (!node->is_null() && !node->is_object()) throw ConfigError("override key '" + key + "' conflicts");
      start = dot + 1;
    }
  }
  return from_json(patch, cfg);
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(to_json(cfg).dump()); }

}  // namespace latentvol::pipeline
