#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ear/config.hpp"
#include "ear/data.hpp"
#include "ear/evaluation.hpp"

namespace ear {

struct AblationArm {
  std::string name;
  bool use_attention = false;
  bool use_lstm = false;
};

/// UNet3D, UNet3D-Attention, 3D-EAR.
const std::vector<AblationArm>& ablation_arms();
const std::vector<LossKind>& ablation_losses();

struct AblationCell {
  std::string arm;
  LossKind loss = LossKind::dice_iou;
  /// Subject-level test scores pooled over seeds.
  std::optional<Summary> dice, sensitivity, ppv;
  /// Mean subject-level test Dice of each seed, in ablation_seeds order.
  std::vector<double> seed_dice;
  double median_seed_dice = 0.0;
};

struct AblationResult {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationCell> cells;  // arm-major, loss-minor

  const AblationCell& cell(const std::string& arm, LossKind loss) const;
};

/// Trains every arm x loss once per seed (k = 1, selection by training Dice) on the training
/// subjects of that seed's split and scores the held-out subjects.
AblationResult run_ablation(RecordStore& store, const RunConfig& config, const std::filesystem::path& out_dir,
                            std::ostream* progress = nullptr);

double median(std::vector<double> values);

nlohmann::json to_json(const AblationResult& result);
/// Dice, Sensitivity and PPV tables: rows are arms, columns are losses, cells "mean ± sd".
std::string ablation_markdown(const AblationResult& result);

}  // namespace ear
