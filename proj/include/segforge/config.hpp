#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "segforge/architecture.hpp"

namespace segforge {

struct OptimizerConfig {
  std::string kind = "adam";
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const OptimizerConfig&) const = default;
};

// In-memory synthetic dataset used when no data_root is given.
struct SyntheticSpec {
  int cases = 4;
  std::uint64_t seed = 1;
  int depth = 8;
  int height = 64;
  int width = 64;
  int lesions = 2;
  bool operator==(const SyntheticSpec&) const = default;
};

struct RunConfig {
  ModelConfig model;
  OptimizerConfig optimizer;
  int epochs = 100;
  int batch_size = 8;
  std::uint64_t seed = 1;
  std::string data_root;  // empty: use `synthetic`
  std::optional<SyntheticSpec> synthetic;
  double split_fraction = 369.0 / 494.0;
  std::uint64_t split_seed = 1;
  std::array<int, 2> crop{128, 128};
  double min_foreground_fraction = 0.001;
  double dice_weight = 1.0;
  double ce_weight = 0.0;
  std::string output_dir = "runs/default";

  // Throws ConfigError on the first violated constraint.
  void validate() const;
  bool operator==(const RunConfig&) const = default;

  // Tiny model on four synthetic 8x64x64 cases, lr 1e-2, batch 4; about a
  // minute on one core.
  static RunConfig desk_preset();
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const RunConfig& cfg);
// Missing keys keep their defaults; unknown keys are a ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Applies "dotted.key=value" to a config document. The value is parsed as
// JSON when possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace segforge
