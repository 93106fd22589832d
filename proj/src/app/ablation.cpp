#include "ear/ablation.hpp"

#include <algorithm>
#include <fstream>
#include <cstdio>
#include <set>

#include "ear/checkpoint.hpp"
#include "ear/training.hpp"

namespace ear {

namespace fs = std::filesystem;
using json = nlohmann::json;

const std::vector<AblationArm>& ablation_arms() {
  static const std::vector<AblationArm> arms{
      {"UNet3D", false, false}, {"UNet3D-Attention", true, false}, {"3D-EAR", true, true}};
  return arms;
}

const std::vector<LossKind>& ablation_losses() {
  static const std::vector<LossKind> losses{LossKind::cross_entropy, LossKind::dice, LossKind::dice_iou};
  return losses;
}

const AblationCell& AblationResult::cell(const std::string& arm, LossKind loss) const {
  for (const auto& c : cells)
    if (c.arm == arm && c.loss == loss) return c;
  throw ConfigError("no ablation cell " + arm + "/" + loss_name(loss));
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

AblationResult run_ablation(RecordStore& store, const RunConfig& config, const fs::path& out_dir,
                            std::ostream* progress) {
  config.validate();
  AblationResult result;
  result.seeds = config.ablation_seeds;
  struct Pool {
    std::vector<double> dice, sens, ppv, seed_dice;
  };
  std::vector<Pool> pools(ablation_arms().size() * ablation_losses().size());

  for (auto seed : config.ablation_seeds) {
    const auto split = make_split(store.manifest().subjects(), config.split.test_fraction, 1, seed);
    const auto train = store.indices_for({split.train_subjects.begin(), split.train_subjects.end()});
    const auto test = store.indices_for({split.test_subjects.begin(), split.test_subjects.end()});
    if (test.empty()) throw ConfigError("ablation: split for seed " + std::to_string(seed) + " has no test subjects");
    check_records_fit(store, train, config.model);
    std::size_t slot = 0;
    for (const auto& arm : ablation_arms())
      for (auto loss : ablation_losses()) {
        RunConfig run = config;
        run.model.use_attention = arm.use_attention;
        run.model.use_lstm = arm.use_lstm;
        run.loss = loss;
        run.seed = seed;
        const auto dir = out_dir / ("seed" + std::to_string(seed)) / (arm.name + "_" + loss_name(loss));
        store.guard_subjects({split.test_subjects.begin(), split.test_subjects.end()});
        FoldResult fr;
        try {
          fr = train_fold(store, run, 0, train, {}, dir);
        } catch (...) {
          store.clear_guard();
          throw;
        }
        store.clear_guard();
        auto best = load_checkpoint(fr.best_checkpoint);
        const auto report = evaluate(store, test, network_predictor(best.network));
        std::ofstream(dir / "eval.json") << to_json(report).dump(2) << '\n';
        auto& pool = pools[slot++];
        std::vector<double> seed_values;
        for (const auto& [subject, s] : report.subjects) {
          if (s.dice) {
            pool.dice.push_back(*s.dice);
            seed_values.push_back(*s.dice);
          }
          if (s.sensitivity) pool.sens.push_back(*s.sensitivity);
          if (s.ppv) pool.ppv.push_back(*s.ppv);
        }
        const auto seed_summary = summarize(seed_values);
        pool.seed_dice.push_back(seed_summary ? seed_summary->mean : 0.0);
        if (progress)
          *progress << "seed " << seed << " " << arm.name << " " << loss_name(loss) << " test dice "
                    << (seed_summary ? seed_summary->mean : 0.0) << '\n';
      }
  }

  std::size_t slot = 0;
  for (const auto& arm : ablation_arms())
    for (auto loss : ablation_losses()) {
      const auto& pool = pools[slot++];
      AblationCell cell;
      cell.arm = arm.name;
      cell.loss = loss;
      cell.dice = summarize(pool.dice);
      cell.sensitivity = summarize(pool.sens);
      cell.ppv = summarize(pool.ppv);
      cell.seed_dice = pool.seed_dice;
      cell.median_seed_dice = median(pool.seed_dice);
      result.cells.push_back(cell);
    }
  return result;
}

namespace {

json summary_json(const std::optional<Summary>& s) {
  if (!s) return nullptr;
  return {{"mean", s->mean}, {"sd", s->sd}, {"n", s->n}};
}

std::string pm(const std::optional<Summary>& s) {
  if (!s) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", s->mean, s->sd);
  return buf;
}

}  // namespace

json to_json(const AblationResult& result) {
  json cells = json::array();
  for (const auto& c : result.cells)
    cells.push_back({{"arm", c.arm},
                     {"loss", loss_name(c.loss)},
                     {"dice", summary_json(c.dice)},
                     {"sensitivity", summary_json(c.sensitivity)},
                     {"ppv", summary_json(c.ppv)},
                     {"seed_dice", c.seed_dice},
                     {"median_seed_dice", c.median_seed_dice}});
  return {{"seeds", result.seeds}, {"aggregation", "subject-level test scores pooled over seeds, mean and sample sd"},
          {"cells", cells}};
}

std::string ablation_markdown(const AblationResult& result) {
  std::string md;
  const auto table = [&](const char* title, auto field) {
    md += std::string("### ") + title + "\n\n| Model |";
    for (auto loss : ablation_losses()) md += " " + loss_name(loss) + " |";
    md += "\n|---|";
    for (std::size_t i = 0; i < ablation_losses().size(); ++i) md += "---|";
    md += "\n";
    for (const auto& arm : ablation_arms()) {
      md += "| " + arm.name + " |";
      for (auto loss : ablation_losses()) md += " " + pm(field(result.cell(arm.name, loss))) + " |";
      md += "\n";
    }
    md += "\n";
  };
  table("Dice", [](const AblationCell& c) { return c.dice; });
  table("Sensitivity", [](const AblationCell& c) { return c.sensitivity; });
  table("PPV", [](const AblationCell& c) { return c.ppv; });
  md += "Subject-level test scores pooled over seeds";
  for (auto s : result.seeds) md += " " + std::to_string(s);
  md += "; mean ± sample sd.\n";
  return md;
}

}  // namespace ear
