#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "ear/config.hpp"
#include "ear/network.hpp"
#include "ear/optim.hpp"

namespace ear {

inline constexpr int kCheckpointFormatVersion = 1;

/// Training state at the end of an epoch.
struct Checkpoint {
  RunConfig run;
  int fold = 0;
  int epoch = 0;  // completed epochs
  std::string rng_state;
  std::optional<double> best_score;
  int best_epoch = 0;
  nlohmann::json extra = nlohmann::json::object();
};

/// Layout: "EARCKPT1", u64 little-endian header length, JSON header, raw little-endian tensor payload.
void save_checkpoint(const std::filesystem::path& file, const Checkpoint& meta, Network& net, const Adam& optimizer);

struct LoadedCheckpoint {
  Checkpoint meta;
  Network network;
  Adam optimizer;
};

/// FormatError on a malformed file, ConfigError if the stored parameters do not fit the stored model config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& file);

}  // namespace ear
