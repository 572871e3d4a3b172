#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "latentvol/checkpoint.hpp"
#include "latentvol/config.hpp"
#include "latentvol/errors.hpp"
#include "latentvol/toml.hpp"
#include "test_support.hpp"

using namespace latentvol;
using namespace latentvol::pipeline;
using latentvol::fixtures::TempDir;

namespace {

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Toml, ParsesSubset) {
  const auto j = toml::parse(R"(
name = "desk"   # comment
[vqgan]
lr = 3e-4
iters = 100
compression = [2, 2, 1]
[run.extra]
flag = true
label = "a # not comment"
)");
  EXPECT_EQ(j["name"], "desk");
  EXPECT_DOUBLE_EQ(j["vqgan"]["lr"].get<double>(), 3e-4);
  EXPECT_EQ(j["vqgan"]["iters"].get<int>(), 100);
  EXPECT_EQ(j["vqgan"]["compression"][2].get<int>(), 1);
  EXPECT_EQ(j["run"]["extra"]["flag"], true);
  EXPECT_EQ(j["run"]["extra"]["label"], "a # not comment");
  EXPECT_EQ(toml::parse(toml::dump(j)), j);
}

TEST(Toml, ErrorsCarryLineNumbers) {
  try {
    toml::parse("a = 1\nb = \n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find('2'), std::string::npos);
  }
  EXPECT_EQ(toml::parse_value("hello", true), "hello");
  EXPECT_THROW(toml::parse_value("hello"), ConfigError);
}

TEST(Config, MrnetDefaults) {
  const auto c = preset("mrnet");
  EXPECT_EQ(c.data.image_size, (Shape3{256, 256, 32}));
  EXPECT_EQ(c.vqgan.compression, (vq::Compression{4, 4, 4}));
  EXPECT_EQ(c.vqgan.codebook_size, 16384);
  EXPECT_EQ(c.vqgan.codebook_dim, 8);
  EXPECT_DOUBLE_EQ(c.vqgan.lr, 3e-4);
  EXPECT_EQ(c.vqgan.batch, 2);
  EXPECT_EQ(c.vqgan.iters, 100000);
  EXPECT_EQ(c.diffusion.iters, 150000);
  EXPECT_DOUBLE_EQ(c.diffusion.lr, 1e-4);
  EXPECT_EQ(c.diffusion.timesteps, 300);
  EXPECT_EQ(c.latent_shape(), (Shape3{64, 64, 8}));
  EXPECT_EQ(preset("adni").latent_shape(), (Shape3{32, 32, 32}));
  EXPECT_THROW(preset("nope"), ConfigError);
}

TEST(Config, TomlRoundTripAndHashStability) {
  TempDir dir("cfg");
  auto c = preset("desk");
  c.vqgan.lr = 1.25e-3;
  c.run.seed = 17;
  save_config(c, dir / "c.toml");
  const auto back = load_config(dir / "c.toml");
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 64u);
  c.run.seed = 18;
  EXPECT_NE(config_hash(back), config_hash(c));
}

TEST(Config, PresetBaseAndOverrides) {
  TempDir dir("cfg");
  std::ofstream(dir / "c.toml") << "name = \"desk\"\n[diffusion]\niters = 7\n";
  const auto c = load_config(dir / "c.toml");
  EXPECT_EQ(c.data.image_size, (Shape3{16, 16, 8}));
  EXPECT_EQ(c.diffusion.iters, 7);
  const auto o = apply_overrides(c, {"vqgan.lr=0.01", "data.flip_axis=width", "diffusion.ema=true"});
  EXPECT_DOUBLE_EQ(o.vqgan.lr, 0.01);
  EXPECT_EQ(o.data.flip_axis, Axis::Width);
  EXPECT_TRUE(o.diffusion.ema);
}

TEST(Config, InvalidValuesAreConfigErrors) {
  const auto c = preset("desk");
  EXPECT_THROW(apply_overrides(c, {"vqgan.unknown=1"}), ConfigError);
  EXPECT_THROW(apply_overrides(c, {"vqgan.iters=\"many\""}), ConfigError);
  EXPECT_THROW(apply_overrides(c, {"data.image_size=[15, 16, 8]"}), ConfigError);
  EXPECT_THROW(apply_overrides(c, {"vqgan.compression=[3, 2, 2]"}), ConfigError);
  EXPECT_THROW(apply_overrides(c, {"diffusion.lr=-1"}), ConfigError);
  EXPECT_THROW(apply_overrides(c, {"novalue"}), ConfigError);
  TempDir dir("cfg");
  EXPECT_THROW(load_config(dir / "missing.toml"), Error);
}

TEST(Checkpoint, SerializeRoundTripIsByteIdentical) {
  TempDir dir("ckpt");
  Checkpoint c;
  c.stage = "vqgan";
  c.iteration = 12;
  c.config = to_json(preset("desk"));
  c.config_hash = config_hash(preset("desk"));
  c.meta = {{"z", 1}, {"a", {1.5, 2.5}}};
  c.add("w", torch::randn({3, 4}));
  c.add("i", torch::arange(5, torch::kInt64));
  c.add("d", torch::rand({2}, torch::kFloat64));
  EXPECT_THROW(c.add("w", torch::zeros({1})), ValueError);
  save_checkpoint(c, dir / "a.lvckpt");
  const auto loaded = load_checkpoint(dir / "a.lvckpt");
  save_checkpoint(loaded, dir / "b.lvckpt");
  EXPECT_EQ(read_bytes(dir / "a.lvckpt"), read_bytes(dir / "b.lvckpt"));
  EXPECT_TRUE(torch::equal(loaded.get("w"), c.get("w")));
  EXPECT_EQ(loaded.get("i").scalar_type(), torch::kInt64);
  EXPECT_EQ(loaded.meta, c.meta);
  EXPECT_THROW((void)loaded.get("absent"), FormatError);
}

TEST(Checkpoint, CorruptInputsAreFormatErrors) {
  Checkpoint c;
  c.stage = "diffusion";
  c.add("x", torch::ones({4}));
  const auto bytes = serialize(c);
  EXPECT_THROW(deserialize("NOTACKPT" + bytes.substr(8)), FormatError);
  EXPECT_THROW(deserialize(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_NO_THROW(deserialize(bytes));
  TempDir dir("ckpt");
  EXPECT_THROW(load_checkpoint(dir / "none.lvckpt"), IoError);
}

TEST(Checkpoint, PrefixLookup) {
  Checkpoint c;
  c.add("enc.a", torch::zeros({1}));
  c.add("enc.b", torch::zeros({1}));
  c.add("dec.a", torch::zeros({1}));
  const auto enc = c.with_prefix("enc.");
  ASSERT_EQ(enc.size(), 2u);
  EXPECT_EQ(enc[1].first, "b");
}

TEST(Sha256, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
