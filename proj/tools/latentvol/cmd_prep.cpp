#include <iomanip>
#include <sstream>

#include "common.hpp"
#include "latentvol/errors.hpp"
#include "latentvol/manifest.hpp"
#include "latentvol/phantom.hpp"
#include "latentvol/preprocess.hpp"
#include "latentvol/transfer.hpp"
#include "latentvol/volume_io.hpp"

namespace latentvol::cli {
namespace {

struct PhantomArgs {
  std::int64_t count = 8;
  std::string shape = "16,16,8";
  std::uint64_t seed = 0;
  std::filesystem::path out = "phantoms";
  double noise = 0.0;
  bool labeled = false;
  double val_fraction = 0.0;
  double test_fraction = 0.0;
};

void add_phantom_command(CLI::App& parent) {
  auto* cmd = parent.add_subcommand("phantom-gen", "Write procedural phantoms and a manifest");
  auto a = std::make_shared<PhantomArgs>();
  cmd->add_option("--count", a->count, "Number of volumes")->capture_default_str();
  cmd->add_option("--shape", a->shape, "H,W,D")->capture_default_str();
  cmd->add_option("--seed", a->seed, "Generator seed")->capture_default_str();
  cmd->add_option("--out", a->out, "Output directory")->capture_default_str();
  cmd->add_option("--noise", a->noise, "Gaussian noise sigma")->capture_default_str();
  cmd->add_flag("--labeled", a->labeled, "Low-contrast phantoms with segmentation masks");
  cmd->add_option("--val-fraction", a->val_fraction, "Share of patients in the val split")->capture_default_str();
  cmd->add_option("--test-fraction", a->test_fraction, "Share of patients in the test split")->capture_default_str();
  cmd->callback([a] {
    if (a->count < 1) throw ConfigError("--count must be >= 1");
    const auto shape = parse_shape(a->shape);
    std::filesystem::create_directories(a->out);
    std::vector<ManifestRecord> records;
    auto name = [](std::int64_t i) {
      std::ostringstream ss;
      ss << "phantom_" << std::setw(4) << std::setfill('0') << i;
      return ss.str();
    };
    if (a->labeled) {
      const auto cases = transfer::labeled_phantoms(static_cast<std::size_t>(a->count), a->seed, shape);
      for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto stem = name(static_cast<std::int64_t>(i));
        const auto img = save_volume(cases[i].image, a->out / stem);
        const auto mask = save_volume(cases[i].mask, a->out / (stem + "_mask"));
        records.push_back({img.filename().string(), cases[i].patient_id, "train", mask.filename().string()});
      }
    } else {
      for (std::int64_t i = 0; i < a->count; ++i) {
        PhantomSpec spec;
        spec.seed = derive_seed(a->seed, static_cast<std::uint64_t>(i));
        spec.shape = shape;
        spec.noise_sigma = a->noise;
        const auto p = save_volume(generate_phantom(spec).volume, a->out / name(i));
        records.push_back({p.filename().string(), name(i), "train", std::nullopt});
      }
    }
    const auto manifest = make_patient_split(a->out, records, a->val_fraction, a->test_fraction, a->seed);
    const auto file = a->out / "manifest.jsonl";
    manifest.save(file);
    print_json({{"count", a->count}, {"manifest", file.string()}});
  });
}

// One input volume -> one output volume.
CLI::App* add_unary(CLI::App& prep, const std::string& name, const std::string& help,
                    std::shared_ptr<std::pair<std::filesystem::path, std::filesystem::path>> io) {
  auto* cmd = prep.add_subcommand(name, help);
  cmd->add_option("--in", io->first, "Input volume")->required();
  cmd->add_option("--out", io->second, "Output volume stem")->required();
  return cmd;
}

void report(const std::filesystem::path& written, const Volume& v) {
  const auto s = v.shape();
  print_json({{"out", written.string()}, {"shape", {s.h, s.w, s.d}}});
}

}  // namespace

void register_prep(CLI::App& app) {
  add_phantom_command(app);

  auto* prep = app.add_subcommand("prep", "Preprocessing operations on single volumes");
  prep->require_subcommand(1);
  add_phantom_command(*prep);

  {
    auto io = std::make_shared<std::pair<std::filesystem::path, std::filesystem::path>>();
    auto spacing = std::make_shared<std::string>();
    auto* cmd = add_unary(*prep, "resample", "Trilinear resampling to a voxel spacing", io);
    cmd->add_option("--spacing", *spacing, "Target spacing sx,sy,sz (mm)")->required();
    cmd->callback([=] {
      const auto v = resample(load_volume(io->first), parse_spacing(*spacing));
      report(save_volume(v, io->second), v);
    });
  }
  {
    auto io = std::make_shared<std::pair<std::filesystem::path, std::filesystem::path>>();
    auto shape = std::make_shared<std::string>();
    auto pad = std::make_shared<bool>(false);
    auto* cmd = add_unary(*prep, "crop", "Centre crop", io);
    cmd->add_option("--shape", *shape, "Target H,W,D")->required();
    cmd->add_flag("--pad", *pad, "Zero-pad axes smaller than the target");
    cmd->callback([=] {
      const auto v = center_crop(load_volume(io->first), parse_shape(*shape), CropOptions{*pad});
      report(save_volume(v, io->second), v);
    });
  }
  {
    auto io = std::make_shared<std::pair<std::filesystem::path, std::filesystem::path>>();
    auto shape = std::make_shared<std::string>();
    auto* cmd = add_unary(*prep, "resize", "Trilinear resize", io);
    cmd->add_option("--shape", *shape, "Target H,W,D")->required();
    cmd->callback([=] {
      const auto v = resize(load_volume(io->first), parse_shape(*shape));
      report(save_volume(v, io->second), v);
    });
  }
  {
    auto io = std::make_shared<std::pair<std::filesystem::path, std::filesystem::path>>();
    auto range = std::make_shared<std::pair<double, double>>(-1.0, 1.0);
    auto* cmd = add_unary(*prep, "normalize", "Min-max normalization", io);
    cmd->add_option("--lo", range->first, "Output minimum")->capture_default_str();
    cmd->add_option("--hi", range->second, "Output maximum")->capture_default_str();
    cmd->callback([=] {
      const auto v = minmax_normalize(load_volume(io->first), range->first, range->second);
      report(save_volume(v, io->second), v);
    });
  }
  {
    struct Args {
      std::filesystem::path in, left, right;
    };
    auto a = std::make_shared<Args>();
    auto* cmd = prep->add_subcommand("split-lateral", "Split along the width axis into two halves");
    cmd->add_option("--in", a->in, "Input volume")->required();
    cmd->add_option("--out-left", a->left, "Left half output stem")->required();
    cmd->add_option("--out-right", a->right, "Right half output stem")->required();
    cmd->callback([a] {
      const auto [l, r] = split_lateral(load_volume(a->in));
      print_json({{"left", save_volume(l, a->left).string()}, {"right", save_volume(r, a->right).string()}});
    });
  }
}

}  // namespace latentvol::cli
