#include "common.hpp"
#include "latentvol/errors.hpp"
#include "latentvol/manifest.hpp"
#include "latentvol/transfer.hpp"
#include "latentvol/volume_io.hpp"

namespace latentvol::cli {
namespace {

std::vector<transfer::LabeledCase> labeled_cases(const std::filesystem::path& file, const std::string& split) {
  const auto manifest = DatasetManifest::load(file);
  std::vector<transfer::LabeledCase> cases;
  for (const auto& r : manifest.records_in(split)) {
    if (!r.mask) throw ConfigError("manifest record " + r.path + " has no mask");
    cases.push_back({load_volume(manifest.resolve(r.path)), load_volume(manifest.resolve(*r.mask)), r.patient_id});
  }
  if (cases.empty()) throw ConfigError("manifest has no records in split '" + split + "'");
  return cases;
}

}  // namespace

void register_transfer(CLI::App& app) {
  auto* tr = app.add_subcommand("transfer", "Self-supervised pretraining and segmentation transfer");
  tr->require_subcommand(1);

  {
    struct Args {
      std::filesystem::path dir, out = "encoder.lvckpt";
      transfer::PretrainConfig cfg;
      transfer::SegModelOptions model;
      std::string patch = "4,4,2";
    };
    auto a = std::make_shared<Args>();
    auto* cmd = tr->add_subcommand("pretrain", "Masked-volume inpainting on unlabeled volumes");
    cmd->add_option("--synthetic-dir", a->dir, "Directory of volumes")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--out", a->out, "Encoder checkpoint")->capture_default_str();
    cmd->add_option("--steps", a->cfg.steps)->capture_default_str();
    cmd->add_option("--batch", a->cfg.batch)->capture_default_str();
    cmd->add_option("--lr", a->cfg.lr)->capture_default_str();
    cmd->add_option("--mask-ratio", a->cfg.mask_ratio)->capture_default_str();
    cmd->add_option("--patch", a->patch, "Patch H,W,D")->capture_default_str();
    cmd->add_option("--seed", a->cfg.seed)->capture_default_str();
    cmd->add_option("--base-channels", a->model.base_channels)->capture_default_str();
    cmd->add_option("--levels", a->model.levels)->capture_default_str();
    cmd->callback([a] {
      std::vector<Volume> volumes;
      for (const auto& f : list_volumes(a->dir)) volumes.push_back(load_volume(f));
      a->cfg.patch = parse_shape(a->patch);
      const auto r = transfer::pretrain(a->model, volumes, a->cfg);
      transfer::save_encoder(r.encoder, a->model, a->out);
      print_json({{"encoder", a->out.string()},
                  {"volumes", volumes.size()},
                  {"heldout_before", r.heldout_before},
                  {"heldout_after", r.heldout_after}});
    });
  }
  {
    struct Args {
      std::filesystem::path manifest, out = "segmenter.lvckpt";
      std::optional<std::filesystem::path> encoder;
      std::string split = "train";
      double fraction = 1.0;
      transfer::FinetuneConfig cfg;
      transfer::SegModelOptions model;
    };
    auto a = std::make_shared<Args>();
    auto* cmd = tr->add_subcommand("finetune", "Train the segmenter on a fraction of the labeled patients");
    cmd->add_option("--manifest", a->manifest, "Labeled manifest (records with masks)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--split", a->split, "Manifest split to train on")->capture_default_str();
    cmd->add_option("--fraction", a->fraction, "Share of patients used")->capture_default_str();
    cmd->add_option("--encoder", a->encoder, "Pretrained encoder checkpoint")->check(CLI::ExistingFile);
    cmd->add_option("--out", a->out, "Segmenter checkpoint")->capture_default_str();
    cmd->add_option("--steps", a->cfg.steps)->capture_default_str();
    cmd->add_option("--batch", a->cfg.batch)->capture_default_str();
    cmd->add_option("--lr", a->cfg.lr)->capture_default_str();
    cmd->add_option("--seed", a->cfg.seed)->capture_default_str();
    cmd->add_option("--base-channels", a->model.base_channels, "Ignored with --encoder")->capture_default_str();
    cmd->add_option("--levels", a->model.levels, "Ignored with --encoder")->capture_default_str();
    cmd->callback([a] {
      std::optional<transfer::EncoderWeights> init;
      auto model = a->model;
      if (a->encoder) {
        auto [weights, options] = transfer::load_encoder(*a->encoder);
        init = std::move(weights);
        model = options;
      }
      const auto cases = labeled_cases(a->manifest, a->split);
      auto r = transfer::finetune(model, cases, a->fraction, init, a->cfg, [](std::int64_t epoch, double dice) {
        log_line("epoch " + std::to_string(epoch) + " train dice " + std::to_string(dice));
      });
      transfer::save_seg_model(r.model, {a->fraction, init.has_value()}, a->out);
      print_json({{"model", a->out.string()},
                  {"fraction", a->fraction},
                  {"pretrained", init.has_value()},
                  {"cases", r.subset.size()},
                  {"epoch_dice", r.epoch_dice}});
    });
  }
  {
    struct Args {
      std::filesystem::path model, manifest;
      std::string split = "test";
    };
    auto a = std::make_shared<Args>();
    auto* cmd = tr->add_subcommand("evaluate", "Mean Dice of a segmenter on a test split");
    cmd->add_option("--model", a->model, "Segmenter checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("--test-manifest", a->manifest, "Labeled manifest")->required()->check(CLI::ExistingFile);
    cmd->add_option("--split", a->split, "Manifest split to evaluate")->capture_default_str();
    cmd->callback([a] {
      auto [model, meta] = transfer::load_seg_model(a->model);
      const auto r = transfer::evaluate_seg(model, labeled_cases(a->manifest, a->split));
      print_json({{"fraction", meta.fraction},
                  {"pretrained", meta.pretrained},
                  {"mean_dice", r.mean_dice},
                  {"per_case", r.per_case}});
    });
  }
}

}  // namespace latentvol::cli
