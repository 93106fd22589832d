#include <doctest.h>

#include <fstream>
#include <sstream>

#include "ear/ablation.hpp"
#include "ear/checkpoint.hpp"
#include "ear/config.hpp"
#include "ear/evaluation.hpp"
#include "ear/training.hpp"
#include "ear/verify.hpp"
#include "test_util.hpp"

using namespace ear;
using json = nlohmann::json;
using testutil::TempDir;

namespace {

/// Checkpoints from different output directories agree in everything but the stored output_dir.
void check_same_state(const std::filesystem::path& a, const std::filesystem::path& b) {
  auto x = load_checkpoint(a), y = load_checkpoint(b);
  CHECK(x.meta.epoch == y.meta.epoch);
  CHECK(x.meta.rng_state == y.meta.rng_state);
  CHECK(x.meta.best_score == y.meta.best_score);
  CHECK(x.optimizer.steps() == y.optimizer.steps());
  auto pa = x.network.parameters(), pb = y.network.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(testutil::same_bits(pa[i].tensor, pb[i].tensor));
  REQUIRE(x.optimizer.state().size() == y.optimizer.state().size());
  for (const auto& [name, m] : x.optimizer.state()) {
    CHECK(m.m == y.optimizer.state().at(name).m);
    CHECK(m.v == y.optimizer.state().at(name).v);
  }
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<CineRecord> small_phantoms(int n, std::uint64_t seed = 1) {
  PhantomOptions opts;
  opts.n_records = n;
  opts.frames = 2;
  opts.height = opts.width = 16;
  opts.seed = seed;
  return generate_phantom(opts);
}

RunConfig small_config(const std::filesystem::path& out) {
  RunConfig cfg;
  cfg.model.depth = 2;
  cfg.model.base_channels = 2;
  cfg.model.frames = 2;
  cfg.epochs = 2;
  cfg.seed = 7;
  cfg.optimizer.lr = 1e-3;
  cfg.split.k_folds = 1;
  cfg.output_dir = out.string();
  return cfg;
}

}  // namespace

TEST_CASE("run config is strict") {
  const auto cfg = run_config_from_json(json::parse(R"({"model":{"depth":3,"frames":8},"loss":"dice","epochs":4})"));
  CHECK(cfg.model.depth == 3);
  CHECK(cfg.model.frames == 8);
  CHECK(cfg.model.base_channels == 8);
  CHECK(cfg.loss == LossKind::dice);
  CHECK(cfg.epochs == 4);
  CHECK(cfg.optimizer.lr == 1e-4);
  CHECK(run_config_from_json(to_json(cfg)) == cfg);

  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"epoch":4})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"model":{"depht":3}})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"epochs":"4"})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"loss":"hinge"})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"model":{"depth":0}})")).validate(), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"split":{"test_fraction":1.2}})")).validate(), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse("[]")), ConfigError);
}

TEST_CASE("config file resolves the data path") {
  TempDir dir("cfg");
  std::ofstream(dir / "run.json") << R"({"data":"ds/manifest.json","epochs":1})";
  const auto cfg = load_run_config(dir / "run.json");
  CHECK(std::filesystem::path(cfg.data) == dir / "ds/manifest.json");
  std::ofstream(dir / "bad.json") << "{\"epochs\": ";
  CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_run_config(dir / "none.json"), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  TempDir dir("ckpt");
  RunConfig cfg = small_config(dir.path());
  Network net = build_network(cfg.model, 3);
  Adam opt(cfg.optimizer);
  Checkpoint meta{cfg, 0, 5, Rng(9).state(), 0.5, 4, json{{"note", "x"}}};
  save_checkpoint(dir / "a.ckpt", meta, net, opt);
  auto loaded = load_checkpoint(dir / "a.ckpt");
  CHECK(loaded.meta.run == cfg);
  CHECK(loaded.meta.epoch == 5);
  CHECK(*loaded.meta.best_score == 0.5);
  CHECK(loaded.meta.best_epoch == 4);
  CHECK(loaded.meta.rng_state == Rng(9).state());
  CHECK(loaded.meta.extra["note"] == "x");
  auto a = net.parameters(), b = loaded.network.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(testutil::same_bits(a[i].tensor, b[i].tensor));

  Rng rng(1);
  const auto x = testutil::random_tensor({1, 4, 2, 16, 16}, rng, 0, 1, DType::f32);
  CHECK(testutil::same_bits(net.forward(x), loaded.network.forward(x)));

  save_checkpoint(dir / "b.ckpt", meta, loaded.network, loaded.optimizer);
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
}

TEST_CASE("corrupted checkpoints are rejected") {
  TempDir dir("badckpt");
  RunConfig cfg = small_config(dir.path());
  Network net = build_network(cfg.model, 3);
  save_checkpoint(dir / "a.ckpt", Checkpoint{cfg}, net, Adam(cfg.optimizer));
  const auto bytes = slurp(dir / "a.ckpt");
  std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 10);
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), FormatError);
  std::ofstream(dir / "magic.ckpt", std::ios::binary) << "NOTCKPT!" << bytes.substr(8);
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), FormatError);
  std::ofstream(dir / "empty.ckpt", std::ios::binary) << "";
  CHECK_THROWS_AS(load_checkpoint(dir / "empty.ckpt"), FormatError);
}

TEST_CASE("summaries use the sample standard deviation") {
  CHECK_FALSE(summarize({}).has_value());
  CHECK(summarize({0.4})->sd == 0.0);
  const auto s = summarize({1.0, 2.0, 3.0, 4.0});
  CHECK(s->mean == 2.5);
  CHECK(s->sd == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-15));
  CHECK(s->n == 4);
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("evaluation of the identity predictor") {
  PhantomOptions opts;
  opts.n_records = 6;
  opts.records_per_subject = 2;
  opts.frames = 2;
  opts.height = opts.width = 16;
  RecordStore store(generate_phantom(opts));
  std::vector<std::size_t> all{0, 1, 2, 3, 4, 5};
  const auto report = evaluate(store, all, identity_predictor());
  CHECK(report.records.size() == 6);
  CHECK(report.subjects.size() == 3);
  CHECK(report.dice->mean == 1.0);
  CHECK(report.dice->sd == 0.0);
  CHECK(report.ppv->mean == 1.0);
  CHECK(report.warnings.empty());
}

TEST_CASE("evaluation aggregates subject means") {
  PhantomOptions opts;
  opts.n_records = 6;
  opts.records_per_subject = 2;
  opts.frames = 2;
  opts.height = opts.width = 16;
  RecordStore store(generate_phantom(opts));
  std::vector<std::size_t> all{0, 1, 2, 3, 4, 5};
  Rng rng(3);
  const auto noisy = [&](const CineRecord& rec) {
    auto m = rec.mask;
    for (auto& v : m.values)
      if (rng.uniform() < 0.1) v = 1 - v;
    return m;
  };
  const auto report = evaluate(store, all, noisy);
  const auto j = to_json(report);
  std::map<std::string, std::vector<double>> by_subject;
  for (const auto& r : j["records"]) by_subject[r["subject_id"]].push_back(r["metrics"]["dice"].get<double>());
  std::vector<double> means;
  for (const auto& [s, v] : by_subject) {
    double sum = 0;
    for (double x : v) sum += x;
    means.push_back(sum / static_cast<double>(v.size()));
  }
  const auto expect = summarize(means);
  CHECK(std::abs(j["aggregate"]["dice"]["mean"].get<double>() - expect->mean) < 1e-12);
  CHECK(std::abs(j["aggregate"]["dice"]["sd"].get<double>() - expect->sd) < 1e-12);
  CHECK(j["aggregate"]["dice"]["n"] == 3);
}

TEST_CASE("empty predictions score zero dice and flag undefined ppv") {
  RecordStore store(small_phantoms(2));
  const auto report = evaluate(store, {0, 1}, [](const CineRecord& r) { return BinaryMask(r.mask.shape); });
  CHECK(report.dice->mean == 0.0);
  CHECK(report.sensitivity->mean == 0.0);
  CHECK_FALSE(report.ppv.has_value());
  CHECK_FALSE(report.warnings.empty());
  CHECK(to_json(report)["records"][0]["metrics"]["ppv"].is_null());
}

TEST_CASE("training is deterministic and resumable") {
  TempDir dir("train");
  RecordStore store(small_phantoms(4));
  auto cfg = small_config(dir / "a");
  cfg.split.test_fraction = 0.25;
  cfg.epochs = 3;
  const auto a = run_training(store, cfg);
  CHECK(a.split.test_subjects.size() == 1);
  CHECK(a.folds.size() == 1);
  CHECK(a.folds[0].history.size() == 3);
  for (auto f : {"train_log.jsonl", "last.ckpt", "best.ckpt", "split.json"}) CHECK(std::filesystem::exists(dir / "a" / f));

  cfg.output_dir = (dir / "b").string();
  run_training(store, cfg);
  CHECK(slurp(dir / "a" / "train_log.jsonl") == slurp(dir / "b" / "train_log.jsonl"));
  check_same_state(dir / "a" / "last.ckpt", dir / "b" / "last.ckpt");

  auto partial = cfg;
  partial.output_dir = (dir / "c").string();
  partial.epochs = 2;
  run_training(store, partial);
  auto rest = cfg;
  rest.output_dir = partial.output_dir;
  TrainOptions resume;
  resume.resume = dir / "c" / "last.ckpt";
  const auto resumed = run_training(store, rest, resume);
  CHECK(resumed.folds[0].history.size() == 1);
  CHECK(slurp(dir / "a" / "train_log.jsonl") == slurp(dir / "c" / "train_log.jsonl"));
  check_same_state(dir / "a" / "last.ckpt", dir / "c" / "last.ckpt");
  check_same_state(dir / "a" / "best.ckpt", dir / "c" / "best.ckpt");

  auto other = cfg;
  other.output_dir = (dir / "d").string();
  other.seed = 8;
  run_training(store, other);
  CHECK(slurp(dir / "a" / "train_log.jsonl") != slurp(dir / "d" / "train_log.jsonl"));
}

TEST_CASE("cross validation folds are disjoint and never touch test subjects") {
  TempDir dir("cv");
  RecordStore store(small_phantoms(18));
  auto cfg = small_config(dir.path());
  cfg.epochs = 1;
  cfg.split.k_folds = 5;
  cfg.split.test_fraction = 0.2;
  const auto summary = run_training(store, cfg);
  CHECK(summary.split.train_subjects.size() == 14);
  CHECK(summary.split.test_subjects.size() == 4);
  REQUIRE(summary.folds.size() == 5);
  std::set<std::string> seen;
  for (const auto& f : summary.split.folds)
    for (const auto& s : f) CHECK(seen.insert(s).second);
  CHECK(seen.size() == 14);
  for (int f = 0; f < 5; ++f) {
    CHECK(std::filesystem::exists(dir / ("fold" + std::to_string(f)) / "train_log.jsonl"));
    CHECK(summary.folds[static_cast<std::size_t>(f)].history[0].val_dice.has_value());
  }
  const auto split = json::parse(slurp(dir / "split.json"));
  CHECK(split["folds"].size() == 5);
  const std::set<std::string> test(summary.split.test_subjects.begin(), summary.split.test_subjects.end());
  for (auto idx : store.access_log()) CHECK(test.count(store.entry(idx).subject_id) == 0);
}

TEST_CASE("training rejects records that do not fit") {
  TempDir dir("fit");
  RecordStore store(small_phantoms(4));
  auto cfg = small_config(dir.path());
  cfg.model.frames = 3;
  CHECK_THROWS_AS(run_training(store, cfg), ConfigError);
  cfg.model.frames = 2;
  cfg.model.depth = 6;
  CHECK_THROWS_AS(run_training(store, cfg), ConfigError);
}

TEST_CASE("tiny ablation") {
  TempDir dir("ablation");
  RecordStore store(small_phantoms(5));
  auto cfg = small_config(dir.path());
  cfg.epochs = 1;
  cfg.ablation_seeds = {1, 2};
  const auto result = run_ablation(store, cfg, dir / "a");
  REQUIRE(result.cells.size() == 9);
  for (const auto& c : result.cells) {
    CHECK(c.seed_dice.size() == 2);
    REQUIRE(c.dice.has_value());
    CHECK(c.dice->n == 2);
  }
  const auto md = ablation_markdown(result);
  CHECK(md.find("| Model | cross_entropy | dice | dice_iou |") != std::string::npos);
  for (const auto& arm : ablation_arms()) CHECK(md.find("| " + arm.name + " |") != std::string::npos);
  CHECK(md.find("### PPV") != std::string::npos);

  const auto again = run_ablation(store, cfg, dir / "b");
  CHECK(to_json(again).dump() == to_json(result).dump());
}

TEST_CASE("verification harness") {
  VerifyOptions opts;
  opts.seeds = 1;
  opts.oracle_instances = 2;
  const auto oracles = oracle_suite(opts);
  CHECK(all_passed(oracles));
  for (const auto& r : oracles) CHECK(r.tolerance > 0.0);

  opts.corrupt_conv_backward = true;
  const auto grads = gradient_suite(opts);
  CHECK_FALSE(all_passed(grads));
  for (const auto& r : grads)
    if (!r.passed) CHECK(r.name.find("conv3d") != std::string::npos);
  const auto report = format_report(grads);
  CHECK(report.find("FAIL") != std::string::npos);
  CHECK(to_json(grads)["checks"].size() == grads.size());
  CHECK(to_json(grads)["passed"] == false);
}
