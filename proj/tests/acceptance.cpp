// Acceptance run: one PASS/FAIL line per criterion. Exit status 0 only if all pass.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>

#include "ear/ablation.hpp"
#include "ear/checkpoint.hpp"
#include "ear/evaluation.hpp"
#include "ear/objectives.hpp"
#include "ear/ops.hpp"
#include "ear/training.hpp"
#include "ear/velocity.hpp"
#include "ear/verify.hpp"
#include "test_util.hpp"

using namespace ear;
using testutil::TempDir;

namespace {

namespace tol {
constexpr double grad_suite_seconds = 300.0;
constexpr double loss_fixed_point = 1e-12;
constexpr double attention_row_sum = 1e-5;
constexpr double desk_seconds = 10.0;
constexpr double overfit_dice = 0.95;
constexpr double overfit_seconds = 1800.0;
constexpr double velocity_relative = 0.02;
}  // namespace tol

struct Outcome {
  bool passed = true;
  std::ostringstream notes;
  std::string failures;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      failures += " [failed: " + what + "]";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

Outcome gradients() {
  Outcome o;
  const auto start = Clock::now();
  const auto results = gradient_suite();
  const double elapsed = seconds_since(start);
  double worst = 0.0;
  bool network = false;
  for (const auto& r : results) {
    worst = std::max(worst, r.measured / r.tolerance);
    network |= r.name == "network_depth2_attention_lstm";
    o.require(r.passed, r.name + " error " + fmt(r.measured) + " > " + fmt(r.tolerance));
  }
  o.require(network, "network check missing");
  o.require(elapsed < tol::grad_suite_seconds, "suite took " + fmt(elapsed) + " s");
  o.notes << results.size() << " checks, worst error/tolerance " << fmt(worst) << ", " << fmt(elapsed) << " s";
  return o;
}

Outcome oracles() {
  Outcome o;
  VerifyOptions opts;
  opts.oracle_instances = 10;
  const auto results = oracle_suite(opts);
  double worst = 0.0;
  for (const auto& r : results) {
    worst = std::max(worst, r.measured);
    o.require(r.passed, r.name + " diff " + fmt(r.measured));
  }
  std::set<std::string> names;
  for (const auto& r : results) names.insert(r.name);
  for (const char* n : {"conv3d", "matmul_batched", "softmax", "lstm_step", "lstm_sequence", "attention_block",
                        "cross_entropy", "dice_loss", "jaccard_term", "dice_iou_loss"}) {
    bool found = false;
    for (const auto& name : names) found |= name.rfind(n, 0) == 0;
    o.require(found, std::string(n) + " not compared");
  }
  o.notes << results.size() << " comparisons x 10 instances, max |diff| " << fmt(worst);
  return o;
}

Tensor grid(std::initializer_list<int> on) {
  std::vector<double> v(16, 0.0);
  for (int i : on) v[static_cast<std::size_t>(i)] = 1.0;
  return Tensor::from_values({1, 4, 4}, v, DType::f64);
}

Outcome loss_fixed_points() {
  Outcome o;
  const Tensor a = grid({0, 1, 2, 3}), b = grid({12, 13, 14, 15});
  const SmoothingFactor f{1.0};
  o.require(dice_loss(a, a, f).item() == 0.0, "dice_loss perfect != 0");
  o.require(jaccard_term(a, a, f).item() == 0.0, "jaccard_term perfect != 0");
  o.require(dice_iou_loss(a, a, f).item() == 0.0, "dice_iou_loss perfect != 0");
  const double d = dice_loss(b, a, f).item(), j = jaccard_term(b, a, f).item(), dj = dice_iou_loss(b, a, f).item();
  o.require(std::abs(d - 8.0 / 9.0) < tol::loss_fixed_point, "dice_loss disjoint " + fmt(d));
  o.require(std::abs(j - 8.0 / 9.0) < tol::loss_fixed_point, "jaccard_term disjoint " + fmt(j));
  o.require(std::abs(dj - 64.0 / 81.0) < tol::loss_fixed_point, "dice_iou_loss disjoint " + fmt(dj));
  o.notes << "perfect 0/0/0, disjoint " << fmt(d) << "/" << fmt(j) << "/" << fmt(dj);
  return o;
}

Outcome attention_and_causality() {
  Outcome o;
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t c = 1 + static_cast<std::int64_t>(rng.below(4)), t = 1 + static_cast<std::int64_t>(rng.below(3));
    const std::int64_t h = 1 + static_cast<std::int64_t>(rng.below(6)), w = 1 + static_cast<std::int64_t>(rng.below(6));
    AttentionBlock block(c, 4096, DType::f64);
    block.init(rng);
    const Tensor x = testutil::random_tensor({2, c, t, h, w}, rng, -3, 3);
    const auto maps = block.attention_maps(x);
    const auto p = maps.size(2);
    const auto v = maps.to_vector();
    for (std::int64_t row = 0; row < maps.size(0) * maps.size(1); ++row) {
      double s = 0.0;
      for (std::int64_t k = 0; k < p; ++k) s += v[static_cast<std::size_t>(row * p + k)];
      worst = std::max(worst, std::abs(s - 1.0));
    }
  }
  o.require(worst <= tol::attention_row_sum, "row sum off by " + fmt(worst));

  int violations = 0, checks = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng r(seed);
    TemporalLSTMBlock lstm(3, DType::f64);
    lstm.init(r);
    const std::int64_t T = 6;
    const Tensor x = testutil::random_tensor({1, 3, T, 3, 4}, r);
    const auto base = lstm.forward(x).to_vector();
    for (std::int64_t t = 0; t + 1 < T; ++t) {
      auto xv = x.to_vector();
      for (std::int64_t ch = 0; ch < 3; ++ch)
        for (std::int64_t i = 0; i < 12; ++i) xv[static_cast<std::size_t>((ch * T + t + 1) * 12 + i)] += r.uniform(0.5, 2);
      const auto out = lstm.forward(Tensor::from_values(x.shape(), xv, DType::f64)).to_vector();
      for (std::int64_t ch = 0; ch < 3; ++ch)
        for (std::int64_t f = 0; f <= t; ++f)
          for (std::int64_t i = 0; i < 12; ++i) {
            const auto k = static_cast<std::size_t>((ch * T + f) * 12 + i);
            violations += std::memcmp(&out[k], &base[k], sizeof(double)) != 0;
          }
      ++checks;
    }
  }
  o.require(violations == 0, std::to_string(violations) + " earlier outputs changed");
  o.notes << "20 inputs, max |row sum - 1| " << fmt(worst) << "; " << checks << " causality perturbations, "
          << violations << " changed outputs";
  return o;
}

Outcome shapes_and_speed() {
  Outcome o;
  EarConfig full;
  const Network net(full);
  const Shape out = net.infer_output_shape({1, 4, 50, 512, 512});
  o.require(out == Shape{1, 2, 50, 512, 512}, "full-size output " + shape_str(out));

  EarConfig desk;
  desk.frames = 8;
  Network small = build_network(desk, 1);
  Rng rng(3);
  const Tensor x = testutil::random_tensor({1, 4, 8, 32, 32}, rng, 0, 1, DType::f32);
  std::vector<double> m(8 * 32 * 32);
  for (auto& v : m) v = static_cast<double>(rng.below(2));
  const Tensor target = Tensor::from_values({1, 8, 32, 32}, m, DType::f32);
  const auto start = Clock::now();
  Tensor loss = segmentation_loss(LossKind::dice_iou, small.forward(x), target);
  backward(loss);
  const double elapsed = seconds_since(start);
  bool grads = true;
  for (auto& p : small.parameters()) grads &= p.tensor.has_grad();
  o.require(grads, "missing parameter gradients");
  o.require(elapsed < tol::desk_seconds, "desk fwd+bwd " + fmt(elapsed) + " s");
  o.notes << "1x4x50x512x512 -> " << shape_str(out) << " (depth " << full.depth << "); 1x4x8x32x32 fwd+bwd "
          << fmt(elapsed) << " s";
  return o;
}

Outcome overfit() {
  Outcome o;
  TempDir dir("accept_overfit");
  PhantomOptions ph;
  ph.n_records = 8;
  ph.frames = 8;
  ph.height = ph.width = 64;
  ph.seed = 1;
  RecordStore store(generate_phantom(ph));
  RunConfig cfg;
  cfg.model.depth = 2;
  cfg.model.frames = 8;
  cfg.loss = LossKind::dice_iou;
  cfg.epochs = 200;
  cfg.seed = 1;
  cfg.optimizer.lr = 1e-3;
  cfg.augment = false;
  cfg.output_dir = dir.path().string();
  std::vector<std::size_t> all(store.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto start = Clock::now();
  const auto fold = train_fold(store, cfg, 0, all, {}, dir.path());
  const double elapsed = seconds_since(start);
  const auto final_dice = fold.history.back().train_dice.value_or(0.0);
  o.require(final_dice >= tol::overfit_dice, "final train Dice " + fmt(final_dice));
  o.require(elapsed < tol::overfit_seconds, "took " + fmt(elapsed) + " s");
  o.notes << "final train Dice " << fmt(final_dice) << " after " << fold.history.size() << " epochs, " << fmt(elapsed)
          << " s";
  return o;
}

Outcome ablation() {
  Outcome o;
  TempDir dir("accept_ablation");
  PhantomOptions ph;
  ph.n_records = 12;
  ph.frames = 8;
  ph.height = ph.width = 32;
  ph.magnitude_noise = 0.2;
  ph.seed = 11;
  RecordStore store(generate_phantom(ph));
  RunConfig cfg;
  cfg.model.depth = 2;
  cfg.model.frames = 8;
  cfg.epochs = 60;
  cfg.optimizer.lr = 1e-3;
  cfg.split.test_fraction = 0.25;
  cfg.split.k_folds = 1;
  cfg.ablation_seeds = {1, 2, 3};
  cfg.output_dir = dir.path().string();
  const auto start = Clock::now();
  const auto result = run_ablation(store, cfg, dir.path());
  const double elapsed = seconds_since(start);

  o.require(result.cells.size() == 9, std::to_string(result.cells.size()) + " cells");
  for (const auto& c : result.cells)
    o.require(c.dice && c.sensitivity && c.ppv && c.seed_dice.size() == 3, c.arm + "/" + loss_name(c.loss) + " incomplete");
  const auto md = ablation_markdown(result);
  for (const char* title : {"### Dice", "### Sensitivity", "### PPV"}) o.require(md.find(title) != std::string::npos, title);
  const double ear = result.cell("3D-EAR", LossKind::dice_iou).median_seed_dice;
  const double unet = result.cell("UNet3D", LossKind::cross_entropy).median_seed_dice;
  o.require(ear >= unet, "3D-EAR(dice_iou) " + fmt(ear) + " < UNet3D(cross_entropy) " + fmt(unet));
  o.notes << "median test Dice 3D-EAR(dice_iou) " << fmt(ear) << " vs UNet3D(cross_entropy) " << fmt(unet) << ", "
          << fmt(elapsed) << " s\n" << md;
  return o;
}

Outcome velocity() {
  Outcome o;
  PhantomOptions ph;
  ph.n_records = 3;
  ph.velocity_noise = 0.0;
  ph.seed = 8;
  double worst = 0.0;
  for (const auto& rec : generate_phantom(ph)) {
    const auto curves = global_velocity_curves(rec, rec.mask);
    for (std::size_t t = 0; t < curves.frames(); ++t) {
      const double ph_t = 2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(ph.frames);
      const auto err = [&](const std::optional<double>& got, double amplitude, double expected) {
        return got ? std::abs(*got - expected) / amplitude : INFINITY;
      };
      worst = std::max({worst, err(curves.radial[t], ph.radial_cm_s, ph.radial_cm_s * std::cos(ph_t)),
                        err(curves.circumferential[t], ph.circumferential_cm_s, ph.circumferential_cm_s * std::sin(ph_t)),
                        err(curves.longitudinal[t], ph.longitudinal_cm_s, ph.longitudinal_cm_s * std::cos(ph_t))});
    }
    const auto peaks = peak_velocities(curves);
    const auto rel = [](double got, double want) { return std::abs(got - want) / std::abs(want); };
    worst = std::max({worst, rel(peaks.radial.max.value, ph.radial_cm_s), rel(peaks.radial.min.value, -ph.radial_cm_s),
                      rel(peaks.circumferential.max.value, ph.circumferential_cm_s),
                      rel(peaks.circumferential.min.value, -ph.circumferential_cm_s),
                      rel(peaks.longitudinal.max.value, ph.longitudinal_cm_s),
                      rel(peaks.longitudinal.min.value, -ph.longitudinal_cm_s)});

    CineRecord still = rec;
    still.image = rec.image.clone();
    const auto plane = static_cast<std::size_t>(rec.frames() * rec.height() * rec.width());
    for (std::size_t i = plane; i < 4 * plane; ++i) still.image.mutable_buffer().set(i, 0.0);
    const auto zero = global_velocity_curves(still, still.mask);
    bool all_zero = true;
    for (std::size_t t = 0; t < zero.frames(); ++t)
      all_zero &= zero.radial[t] == 0.0 && zero.circumferential[t] == 0.0 && zero.longitudinal[t] == 0.0;
    o.require(all_zero, "zero field gives nonzero curves");

    auto specked = rec.mask;
    std::int64_t placed = 0;
    for (std::int64_t c = 0; c + 1 < rec.width() && placed == 0; ++c)
      if (!specked.at(0, 0, c) && !specked.at(0, 0, c + 1) && !specked.at(0, 1, c) && !specked.at(0, 1, c + 1)) {
        specked.at(0, 0, c) = specked.at(0, 0, c + 1) = 1;
        placed = 2;
      }
    const auto cleaned = postprocess_mask(specked);
    o.require(placed == 2 && cleaned == rec.mask, "speck not removed or annulus altered");
    o.require(postprocess_mask(cleaned) == cleaned, "postprocess not idempotent");
  }
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    BinaryMask m({2, 24, 24});
    for (auto& v : m.values) v = rng.uniform() < 0.4;
    const auto once = postprocess_mask(m);
    o.require(postprocess_mask(once) == once, "postprocess not idempotent on random mask");
  }
  o.require(worst <= tol::velocity_relative, "velocity error " + fmt(worst));
  o.notes << "max curve/peak error " << fmt(100 * worst) << "% of amplitude; zero field exact; speck removed, idempotent";
  return o;
}

Outcome reproducibility() {
  Outcome o;
  TempDir dir("accept_repro");
  PhantomOptions ph;
  ph.n_records = 5;
  ph.frames = 4;
  ph.height = ph.width = 16;
  ph.seed = 5;
  RecordStore store(generate_phantom(ph));
  RunConfig cfg;
  cfg.model.depth = 2;
  cfg.model.base_channels = 4;
  cfg.model.frames = 4;
  cfg.epochs = 4;
  cfg.seed = 13;
  cfg.optimizer.lr = 1e-3;
  cfg.split.k_folds = 1;
  cfg.output_dir = (dir / "run").string();
  const auto run_dir = dir / "run";
  const std::vector<std::string> files{"train_log.jsonl", "last.ckpt", "best.ckpt", "split.json"};

  run_training(store, cfg);
  std::vector<std::string> first;
  for (const auto& f : files) first.push_back(slurp(run_dir / f));
  std::filesystem::remove_all(run_dir);
  run_training(store, cfg);
  for (std::size_t i = 0; i < files.size(); ++i) o.require(slurp(run_dir / files[i]) == first[i], files[i] + " differs on rerun");

  std::filesystem::remove_all(run_dir);
  auto partial = cfg;
  partial.epochs = 2;
  run_training(store, partial);
  TrainOptions resume;
  resume.resume = run_dir / "last.ckpt";
  run_training(store, cfg, resume);
  o.require(slurp(run_dir / "train_log.jsonl") == first[0], "resumed log differs");
  o.require(slurp(run_dir / "last.ckpt") == first[1], "resumed checkpoint differs");

  std::vector<std::string> subjects;
  for (int i = 0; i < 18; ++i) subjects.push_back("subject-" + std::to_string(i));
  const auto plan = make_split(subjects, 0.2, 5, 99);
  std::set<std::string> train(plan.train_subjects.begin(), plan.train_subjects.end());
  std::set<std::string> test(plan.test_subjects.begin(), plan.test_subjects.end());
  o.require(test.size() == 4 && train.size() == 14, "split sizes " + std::to_string(test.size()) + "/" + std::to_string(train.size()));
  for (const auto& s : test) o.require(train.count(s) == 0, s + " in both train and test");
  std::multiset<std::string> in_folds;
  for (const auto& f : plan.folds) in_folds.insert(f.begin(), f.end());
  o.require(in_folds == std::multiset<std::string>(train.begin(), train.end()), "folds do not partition train");

  ph.n_records = 18;
  RecordStore cv_store(generate_phantom(ph));
  auto cv = cfg;
  cv.epochs = 1;
  cv.split.k_folds = 5;
  cv.output_dir = (dir / "cv").string();
  const auto summary = run_training(cv_store, cv);
  std::set<std::string> held(summary.split.test_subjects.begin(), summary.split.test_subjects.end());
  std::size_t leaks = 0;
  for (auto idx : cv_store.access_log()) leaks += held.count(cv_store.entry(idx).subject_id);
  o.require(leaks == 0 && held.size() == 4 && summary.folds.size() == 5, "cross-validation touched test subjects");
  o.notes << "rerun and resume bitwise identical; 18 -> " << test.size() << " test / " << train.size()
          << " train, 5 folds partition; " << cv_store.access_log().size() << " training reads, " << leaks
          << " of held-out subjects";
  return o;
}

Outcome container() {
  Outcome o;
  TempDir dir("accept_container");
  PhantomOptions ph;
  ph.n_records = 2;
  ph.height = ph.width = 32;
  const auto recs = generate_phantom(ph);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto path = dir / ("rec" + std::to_string(i));
    save_record(recs[i], path);
    const auto back = load_record(path);
    o.require(back == recs[i] && testutil::same_bits(back.image, recs[i].image), "round trip differs");
    save_record(back, dir / "again");
    o.require(slurp(dir / "again" / "image.raw") == slurp(path / "image.raw") &&
                  slurp(dir / "again" / "mask.raw") == slurp(path / "mask.raw"),
              "re-saved bytes differ");
  }

  const auto victim = dir / "rec0";
  const auto full = std::filesystem::file_size(victim / "image.raw");
  std::filesystem::resize_file(victim / "image.raw", full - 4);
  bool format_error = false;
  try {
    load_record(victim);
  } catch (const FormatError& e) {
    format_error = e.offset() == full - 4;
  } catch (...) {
  }
  o.require(format_error, "truncated payload did not raise FormatError at the end of data");

  save_record(recs[0], victim);
  auto mask = slurp(victim / "mask.raw");
  mask[mask.size() / 2] = 2;
  std::ofstream(victim / "mask.raw", std::ios::binary) << mask;
  bool dimension_error = false;
  try {
    load_record(victim);
  } catch (const DimensionError&) {
    dimension_error = true;
  } catch (...) {
  }
  o.require(dimension_error, "mask value 2 did not raise DimensionError");
  o.notes << "round trip bitwise; truncated payload -> FormatError; mask value 2 -> DimensionError";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},
      {"oracle equivalence", oracles},
      {"loss fixed points", loss_fixed_points},
      {"attention rows and temporal causality", attention_and_causality},
      {"shape contract and desk-scale speed", shapes_and_speed},
      {"phantom overfit", overfit},
      {"ablation trend", ablation},
      {"velocity pipeline", velocity},
      {"reproducibility and split hygiene", reproducibility},
      {"container format", container},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(n)) continue;
    Outcome result;
    try {
      result = criteria[i].second();
    } catch (const std::exception& e) {
      result.passed = false;
      result.failures += std::string(" [exception: ") + e.what() + "]";
    }
    failures += !result.passed;
    std::printf("%s criterion %d (%s): %s%s\n", result.passed ? "PASS" : "FAIL", n, criteria[i].first,
                result.notes.str().c_str(), result.failures.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
