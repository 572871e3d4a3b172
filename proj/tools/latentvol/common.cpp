#include "common.hpp"

#include <iostream>
#include <sstream>

#include "latentvol/errors.hpp"

namespace latentvol::cli {
namespace {

std::vector<double> parse_triple(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ConfigError(std::string(what) + " must be three comma-separated numbers, got '" + text + "'");
    }
  }
  if (out.size() != 3) throw ConfigError(std::string(what) + " must have three components, got '" + text + "'");
  return out;
}

}  // namespace

void ConfigArgs::add_to(CLI::App& cmd) {
  cmd.add_option("--config", file, "TOML experiment config")->check(CLI::ExistingFile);
  cmd.add_option("--preset", preset, "Base preset when no --config is given")->capture_default_str();
  cmd.add_option("--set", overrides, "Override, e.g. --set vqgan.iters=500 (repeatable)");
}

pipeline::ExperimentConfig ConfigArgs::load() const {
  auto cfg = file ? pipeline::load_config(*file) : pipeline::preset(preset);
  return pipeline::apply_overrides(cfg, overrides);
}

Shape3 parse_shape(const std::string& text) {
  const auto v = parse_triple(text, "shape");
  Shape3 s{static_cast<std::int64_t>(v[0]), static_cast<std::int64_t>(v[1]), static_cast<std::int64_t>(v[2])};
  for (int a = 0; a < 3; ++a) {
    if (s[a] < 1 || static_cast<double>(s[a]) != v[static_cast<std::size_t>(a)]) {
      throw ConfigError("shape extents must be positive integers, got '" + text + "'");
    }
  }
  return s;
}

Spacing parse_spacing(const std::string& text) {
  const auto v = parse_triple(text, "spacing");
  return {v[0], v[1], v[2]};
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << std::endl; }

void log_line(const std::string& line) { std::cerr << line << std::endl; }

}  // namespace latentvol::cli
