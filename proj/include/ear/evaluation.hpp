#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ear/data.hpp"
#include "ear/network.hpp"
#include "ear/objectives.hpp"

namespace ear {

/// Produces a binary [T,H,W] foreground mask for a record.
using Predictor = std::function<BinaryMask(const CineRecord&)>;

/// Argmax of the network's class probabilities.
Predictor network_predictor(const Network& net);
/// Returns the record's own ground truth; for exercising the scoring path.
Predictor identity_predictor();

/// Argmax prediction followed by postprocess_mask.
BinaryMask predict_mask(const Network& net, const CineRecord& record);

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation (n - 1); 0 for a single value
  std::int64_t n = 0;
};
/// Empty input -> std::nullopt.
std::optional<Summary> summarize(const std::vector<double>& values);

struct RecordScore {
  std::string subject_id;
  std::string slice_id;
  MetricReport metrics;
};

struct SubjectScore {
  std::optional<double> dice, sensitivity, ppv;  // means over the subject's records with defined values
  std::int64_t records = 0;
};

struct EvalReport {
  std::vector<RecordScore> records;
  std::map<std::string, SubjectScore> subjects;
  /// Mean and sd across subjects.
  std::optional<Summary> dice, sensitivity, ppv;
  std::vector<std::string> warnings;
};

EvalReport evaluate(RecordStore& store, const std::vector<std::size_t>& indices, const Predictor& predict);

nlohmann::json to_json(const MetricReport& m);
nlohmann::json to_json(const EvalReport& report);

}  // namespace ear
