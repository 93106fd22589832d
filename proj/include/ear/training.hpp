#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ear/config.hpp"
#include "ear/data.hpp"
#include "ear/network.hpp"

namespace ear {

struct EpochLog {
  int fold = 0;
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> train_dice;
  std::optional<double> val_loss;
  std::optional<double> val_dice;
  bool best = false;

  nlohmann::json to_json() const;
};

struct FoldResult {
  int fold = 0;
  std::vector<EpochLog> history;  // epochs run by this call
  std::optional<double> best_score;
  int best_epoch = 0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
};

struct TrainOptions {
  /// Continue from this checkpoint (same model config); the log is appended.
  std::optional<std::filesystem::path> resume;
  /// Human-readable progress lines; nullptr for silence.
  std::ostream* progress = nullptr;
};

/// Trains one network on `train` records, scoring `validation` after every epoch. The best
/// epoch by validation Dice (training Dice when `validation` is empty) is kept in best.ckpt;
/// last.ckpt and train_log.jsonl are written to `dir` every epoch.
FoldResult train_fold(RecordStore& store, const RunConfig& config, int fold, const std::vector<std::size_t>& train,
                      const std::vector<std::size_t>& validation, const std::filesystem::path& dir,
                      const TrainOptions& options = {});

struct TrainSummary {
  SplitPlan split;
  std::vector<FoldResult> folds;
};

/// Subject split, then one train_fold per fold (k_folds > 1) or a single run on all training
/// subjects. Test subjects are guarded in the store for the whole run.
TrainSummary run_training(RecordStore& store, const RunConfig& config, const TrainOptions& options = {});

/// Throws ConfigError if records in `indices` do not fit the model (channels, frames, spatial divisibility).
void check_records_fit(RecordStore& store, const std::vector<std::size_t>& indices, const EarConfig& model);

}  // namespace ear
