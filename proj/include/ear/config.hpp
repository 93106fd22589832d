#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ear/network.hpp"
#include "ear/objectives.hpp"

namespace ear {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct SplitConfig {
  double test_fraction = 0.2;
  int k_folds = 5;

  friend bool operator==(const SplitConfig&, const SplitConfig&) = default;
};

struct RunConfig {
  EarConfig model;
  LossKind loss = LossKind::dice_iou;
  AdamConfig optimizer;
  int epochs = 50;
  int batch_size = 1;
  std::uint64_t seed = 0;
  std::string data;  // manifest path
  SplitConfig split;
  std::string output_dir = "runs";
  /// Random quarter-turn rotation of training records.
  bool augment = true;
  /// Seeds of the ablation grid; every cell is trained once per seed.
  std::vector<std::uint64_t> ablation_seeds{1, 2, 3};

  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

nlohmann::json to_json(const EarConfig& cfg);
nlohmann::json to_json(const RunConfig& cfg);
/// Strict: unknown keys and wrong types raise ConfigError; absent keys keep their defaults.
EarConfig ear_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Parses a JSON file; a relative `data` path is resolved against the file's directory.
RunConfig load_run_config(const std::filesystem::path& file);

}  // namespace ear
