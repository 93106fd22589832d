#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ear/ablation.hpp"
#include "ear/checkpoint.hpp"
#include "ear/config.hpp"
#include "ear/data.hpp"
#include "ear/errors.hpp"
#include "ear/evaluation.hpp"
#include "ear/training.hpp"
#include "ear/velocity.hpp"
#include "ear/verify.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ear;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output;
  std::string checkpoint;
  bool deterministic = false;
  bool velocity = false;
  std::string manifest;
  std::vector<std::string> records;
  std::vector<std::string> subjects;
  std::string mask_from;
  bool identity = false;
  bool corrupt_conv = false;
  PhantomOptions phantom;
};

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("cannot write " + file.string());
  out << text;
}

RunConfig run_config(const Common& c) {
  if (c.config.empty()) throw ConfigError("--config is required");
  RunConfig cfg = load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.output) cfg.output_dir = *c.output;
  cfg.validate();
  return cfg;
}

/// Records named by --record, or the --manifest entries restricted to --subject.
struct Selection {
  RecordStore store;
  std::vector<std::size_t> indices;
};

Selection select_records(const Common& c) {
  if (!c.records.empty()) {
    std::vector<CineRecord> recs;
    for (const auto& r : c.records) recs.push_back(load_record(r));
    Selection s{RecordStore(std::move(recs)), {}};
    for (std::size_t i = 0; i < s.store.size(); ++i) s.indices.push_back(i);
    return s;
  }
  if (c.manifest.empty()) throw ConfigError("give --record or --manifest");
  Selection s{RecordStore(load_manifest(c.manifest)), {}};
  if (c.subjects.empty()) {
    for (std::size_t i = 0; i < s.store.size(); ++i) s.indices.push_back(i);
  } else {
    s.indices = s.store.indices_for({c.subjects.begin(), c.subjects.end()});
    if (s.indices.empty()) throw ConfigError("no manifest records for the given subjects");
  }
  return s;
}

json peaks_json(const PeakVelocities& p) {
  const auto one = [](const CurvePeaks& c) {
    return json{{"max", {{"value", c.max.value}, {"frame", c.max.frame}}},
                {"min", {{"value", c.min.value}, {"frame", c.min.frame}}}};
  };
  return {{"units", "cm/s"},
          {"longitudinal", one(p.longitudinal)},
          {"radial", one(p.radial)},
          {"circumferential", one(p.circumferential)}};
}

json difference_json(const CurveDifference& d) {
  return {{"rms", d.rms}, {"max_delta", d.max_delta}, {"min_delta", d.min_delta}, {"frames_compared", d.frames_compared}};
}

void write_velocity(const CineRecord& rec, const BinaryMask& mask, const fs::path& dir) {
  const auto curves = global_velocity_curves(rec, mask);
  fs::create_directories(dir);
  std::ofstream csv(dir / "curves.csv", std::ios::trunc);
  if (!csv) throw DataError("cannot write " + (dir / "curves.csv").string());
  write_curves_csv(curves, csv);
  write_text(dir / "peaks.json", peaks_json(peak_velocities(curves)).dump(2) + "\n");
}

int cmd_train(const Common& c) {
  const RunConfig cfg = run_config(c);
  RecordStore store(load_manifest(cfg.data));
  TrainOptions opts;
  opts.progress = &std::cout;
  if (!c.checkpoint.empty()) opts.resume = fs::path(c.checkpoint);
  const auto summary = run_training(store, cfg, opts);
  json folds = json::array();
  for (const auto& f : summary.folds)
    folds.push_back({{"fold", f.fold},
                     {"best_epoch", f.best_epoch},
                     {"best_dice", f.best_score ? json(*f.best_score) : json(nullptr)},
                     {"best_checkpoint", f.best_checkpoint.string()}});
  write_text(fs::path(cfg.output_dir) / "train_summary.json", json{{"folds", folds}}.dump(2) + "\n");
  return kOk;
}

int cmd_ablation(const Common& c) {
  const RunConfig cfg = run_config(c);
  RecordStore store(load_manifest(cfg.data));
  const fs::path out = cfg.output_dir;
  const auto result = run_ablation(store, cfg, out, &std::cout);
  write_text(out / "ablation.json", to_json(result).dump(2) + "\n");
  const auto table = ablation_markdown(result);
  write_text(out / "ablation.md", table);
  std::cout << table;
  return kOk;
}

int cmd_eval(const Common& c) {
  auto sel = select_records(c);
  std::optional<LoadedCheckpoint> ckpt;
  Predictor predict = identity_predictor();
  if (!c.identity) {
    if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required (or --identity)");
    ckpt.emplace(load_checkpoint(c.checkpoint));
    check_records_fit(sel.store, sel.indices, ckpt->network.config());
    predict = network_predictor(ckpt->network);
  }
  const auto report = evaluate(sel.store, sel.indices, predict);
  const auto text = to_json(report).dump(2) + "\n";
  if (c.output)
    write_text(*c.output, text);
  else
    std::cout << text;
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
  return report.dice ? kOk : kFailure;
}

int cmd_predict(const Common& c) {
  if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (c.records.size() != 1) throw ConfigError("predict takes exactly one --record");
  if (!c.output) throw ConfigError("--output is required");
  const auto loaded = load_checkpoint(c.checkpoint);
  RecordStore store(std::vector<CineRecord>{load_record(c.records.front())});
  check_records_fit(store, {0}, loaded.network.config());
  const CineRecord& rec = store.get(0);
  CineRecord out = rec;
  out.mask = predict_mask(loaded.network, rec);
  const fs::path dir = *c.output;
  save_record(out, dir / "prediction");
  json info{{"record", c.records.front()}, {"checkpoint", c.checkpoint}};
  if (rec.mask.count() > 0) info["dice_vs_record_mask"] = to_json(compute_metrics(out.mask, rec.mask));
  write_text(dir / "prediction.json", info.dump(2) + "\n");
  if (c.velocity) write_velocity(out, out.mask, dir);
  return kOk;
}

int cmd_velocity(const Common& c) {
  if (c.records.size() != 1) throw ConfigError("velocity takes exactly one --record");
  if (!c.output) throw ConfigError("--output is required");
  const CineRecord rec = load_record(c.records.front());
  const fs::path dir = *c.output;
  if (c.mask_from.empty()) {
    write_velocity(rec, rec.mask, dir);
    return kOk;
  }
  const CineRecord other = load_record(c.mask_from);
  if (other.mask.shape != rec.mask.shape) throw ConfigError("--mask-from shape does not match the record");
  write_velocity(rec, other.mask, dir);
  const auto cmp = curve_comparison(global_velocity_curves(rec, other.mask), global_velocity_curves(rec, rec.mask));
  write_text(dir / "comparison.json", json{{"automatic", c.mask_from},
                                           {"manual", c.records.front()},
                                           {"longitudinal", difference_json(cmp.longitudinal)},
                                           {"radial", difference_json(cmp.radial)},
                                           {"circumferential", difference_json(cmp.circumferential)}}
                                          .dump(2) + "\n");
  return kOk;
}

int cmd_verify(const Common& c) {
  VerifyOptions opts;
  opts.corrupt_conv_backward = c.corrupt_conv;
  const auto results = run_verify(opts);
  std::cout << format_report(results);
  if (c.output) write_text(*c.output, to_json(results).dump(2) + "\n");
  return all_passed(results) ? kOk : kFailure;
}

int cmd_phantom(const Common& c) {
  if (!c.output) throw ConfigError("--output is required");
  PhantomOptions opts = c.phantom;
  if (c.seed) opts.seed = *c.seed;
  const auto manifest = write_dataset(generate_phantom(opts), *c.output);
  std::cout << "wrote " << manifest.records.size() << " records to " << (fs::path(*c.output) / "manifest.json").string()
            << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Left-ventricle segmentation and velocity analysis for 2D+t velocity-mapping MRI"};
  app.require_subcommand(1);
  Common c;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", c.seed, "Override the run seed");
    sub->add_option("--output", c.output, "Output path");
    sub->add_flag("--deterministic", c.deterministic, "Deterministic kernels (always on: kernels run serially)");
  };

  auto* train = app.add_subcommand("train", "Train with subject split and k-fold cross-validation");
  train->add_option("--config", c.config, "Run config JSON")->required();
  train->add_option("--checkpoint", c.checkpoint, "Resume from this checkpoint");
  common(train);

  auto* ablation = app.add_subcommand("ablation", "Train and test the 3 x 3 architecture/loss grid");
  ablation->add_option("--config", c.config, "Run config JSON")->required();
  common(ablation);

  const auto inputs = [&](CLI::App* sub) {
    sub->add_option("--record", c.records, "Record container directory");
    sub->add_option("--manifest", c.manifest, "Dataset manifest");
    sub->add_option("--subject", c.subjects, "Restrict the manifest to these subjects");
  };

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on records");
  eval->add_option("--checkpoint", c.checkpoint, "Model checkpoint");
  eval->add_flag("--identity", c.identity, "Score each record's own mask instead of a model");
  inputs(eval);
  common(eval);

  auto* predict = app.add_subcommand("predict", "Segment one record");
  predict->add_option("--checkpoint", c.checkpoint, "Model checkpoint")->required();
  predict->add_flag("--velocity", c.velocity, "Also write velocity curves and peaks");
  predict->add_option("--record", c.records, "Record container directory")->required();
  common(predict);

  auto* velocity = app.add_subcommand("velocity", "Global velocity curves of a record");
  velocity->add_option("--record", c.records, "Record container directory")->required();
  velocity->add_option("--mask-from", c.mask_from, "Take the mask from this container and compare to the record's own");
  common(velocity);

  auto* verify = app.add_subcommand("verify", "Gradient, oracle and invariant checks");
  verify->add_flag("--corrupt-conv", c.corrupt_conv, "Scale conv3d gradients by 1.1 (self-test)");
  common(verify);

  auto* phantom = app.add_subcommand("phantom", "Write a synthetic dataset");
  phantom->add_option("--records", c.phantom.n_records, "Number of records");
  phantom->add_option("--records-per-subject", c.phantom.records_per_subject, "Slices per subject");
  phantom->add_option("--frames", c.phantom.frames, "Frames per record");
  phantom->add_option("--height", c.phantom.height, "Rows");
  phantom->add_option("--width", c.phantom.width, "Columns");
  phantom->add_option("--velocity-noise", c.phantom.velocity_noise, "Velocity noise sd, cm/s");
  phantom->add_option("--magnitude-noise", c.phantom.magnitude_noise, "Magnitude noise sd");
  common(phantom);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return cmd_train(c);
    if (*ablation) return cmd_ablation(c);
    if (*eval) return cmd_eval(c);
    if (*predict) return cmd_predict(c);
    if (*velocity) return cmd_velocity(c);
    if (*verify) return cmd_verify(c);
    if (*phantom) return cmd_phantom(c);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
