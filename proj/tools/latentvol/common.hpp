#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "latentvol/config.hpp"
#include "latentvol/volume.hpp"

namespace latentvol::cli {

/// --config / --preset / --set handling shared by the training commands.
struct ConfigArgs {
  std::optional<std::filesystem::path> file;
  std::string preset = "mrnet";
  std::vector<std::string> overrides;

  void add_to(CLI::App& cmd);
  [[nodiscard]] pipeline::ExperimentConfig load() const;
};

Shape3 parse_shape(const std::string& text);
Spacing parse_spacing(const std::string& text);

void print_json(const nlohmann::json& j);
void log_line(const std::string& line);

void register_train(CLI::App& app);
void register_prep(CLI::App& app);
void register_transfer(CLI::App& app);
void register_study(CLI::App& app);

}  // namespace latentvol::cli
