#include "ear/training.hpp"

#include <fstream>
#include <set>

#include "ear/checkpoint.hpp"
#include "ear/evaluation.hpp"
#include "ear/ops.hpp"

namespace ear {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::uint64_t fold_seed(std::uint64_t seed, int fold) {
  return Rng::derive(seed, static_cast<std::uint64_t>(fold), 0x5eed).next_u64();
}

}  // namespace

json EpochLog::to_json() const {
  return {{"fold", fold},
          {"epoch", epoch},
          {"train_loss", train_loss},
          {"train_dice", optional_json(train_dice)},
          {"val_loss", optional_json(val_loss)},
          {"val_dice", optional_json(val_dice)},
          {"best", best}};
}

void check_records_fit(RecordStore& store, const std::vector<std::size_t>& indices, const EarConfig& model) {
  const std::int64_t div = std::int64_t{1} << (model.depth - 1);
  for (auto idx : indices) {
    const auto& rec = store.get(idx);
    const std::string name = "record '" + store.entry(idx).path + "'";
    if (model.in_channels != kRecordChannels)
      throw ConfigError("model expects " + std::to_string(model.in_channels) + " input channels, records have 4");
    if (model.frames > 0 && rec.frames() != model.frames)
      throw ConfigError(name + " has " + std::to_string(rec.frames()) + " frames, model expects " +
                        std::to_string(model.frames));
    if (rec.height() % div || rec.width() % div)
      throw ConfigError(name + " size " + std::to_string(rec.height()) + "x" + std::to_string(rec.width()) +
                        " is not divisible by " + std::to_string(div));
  }
}

FoldResult train_fold(RecordStore& store, const RunConfig& config, int fold, const std::vector<std::size_t>& train,
                      const std::vector<std::size_t>& validation, const fs::path& dir, const TrainOptions& options) {
  config.validate();
  if (train.empty()) throw ConfigError("fold " + std::to_string(fold) + " has no training records");
  fs::create_directories(dir);
  const auto seed = fold_seed(config.seed, fold);

  Network net = build_network(config.model, seed);
  Adam optimizer(config.optimizer);
  Rng shuffle_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  int start_epoch = 0;
  FoldResult result;
  result.fold = fold;
  result.best_checkpoint = dir / "best.ckpt";
  result.last_checkpoint = dir / "last.ckpt";

  if (options.resume) {
    auto loaded = load_checkpoint(*options.resume);
    if (!(loaded.network.config() == config.model))
      throw ConfigError("checkpoint " + options.resume->string() + " was trained with a different model config");
    net = std::move(loaded.network);
    optimizer = Adam(config.optimizer);
    optimizer.restore(loaded.optimizer.steps(), loaded.optimizer.state());
    shuffle_rng.set_state(loaded.meta.rng_state);
    start_epoch = loaded.meta.epoch;
    result.best_score = loaded.meta.best_score;
    result.best_epoch = loaded.meta.best_epoch;
  }

  std::ofstream log(dir / "train_log.jsonl", options.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write " + (dir / "train_log.jsonl").string());

  const auto aug_seed = Rng::derive(seed, 0xa06).next_u64();
  std::vector<std::size_t> order = train;
  for (int epoch = start_epoch + 1; epoch <= config.epochs; ++epoch) {
    order = train;
    shuffle_rng.shuffle(order);
    auto params = net.parameters();
    double loss_sum = 0.0;
    std::vector<double> dices;
    int pending = 0;
    for (std::size_t j = 0; j < order.size(); ++j) {
      const auto idx = order[j];
      const CineRecord* rec = &store.get(idx);
      CineRecord rotated;
      if (config.augment) {
        Rng aug = Rng::derive(aug_seed, static_cast<std::uint64_t>(epoch), idx);
        rotated = random_rotation(*rec, aug);
        rec = &rotated;
      }
      Tensor probs = net.forward(prepare_input(*rec, net.dtype()));
      Tensor loss = segmentation_loss(config.loss, probs, prepare_target(*rec, net.dtype()));
      loss_sum += loss.item();
      if (auto d = compute_metrics(argmax_mask(probs.detach()), rec->mask).dice) dices.push_back(*d);
      backward(config.batch_size > 1 ? scale(loss, 1.0 / config.batch_size) : loss);
      if (++pending == config.batch_size || j + 1 == order.size()) {
        optimizer.step(params);
        pending = 0;
      }
    }

    EpochLog entry;
    entry.fold = fold;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(order.size());
    entry.train_dice = mean_of(dices);
    if (!validation.empty()) {
      NoGradGuard no_grad;
      double vloss = 0.0;
      std::vector<double> vdice;
      for (auto idx : validation) {
        const auto& rec = store.get(idx);
        Tensor probs = net.forward(prepare_input(rec, net.dtype()));
        vloss += segmentation_loss(config.loss, probs, prepare_target(rec, net.dtype())).item();
        if (auto d = compute_metrics(argmax_mask(probs), rec.mask).dice) vdice.push_back(*d);
      }
      entry.val_loss = vloss / static_cast<double>(validation.size());
      entry.val_dice = mean_of(vdice);
    }
    const auto score = validation.empty() ? entry.train_dice : entry.val_dice;
    entry.best = score && (!result.best_score || *score > *result.best_score);

    Checkpoint meta{config, fold, epoch, shuffle_rng.state(), result.best_score, result.best_epoch, json::object()};
    if (entry.best) {
      result.best_score = meta.best_score = score;
      result.best_epoch = meta.best_epoch = epoch;
      save_checkpoint(result.best_checkpoint, meta, net, optimizer);
    }
    save_checkpoint(result.last_checkpoint, meta, net, optimizer);
    log << entry.to_json().dump() << '\n' << std::flush;
    if (options.progress)
      *options.progress << "fold " << fold << " epoch " << epoch << "/" << config.epochs << " loss "
                        << entry.train_loss << " train_dice " << optional_json(entry.train_dice).dump()
                        << " val_dice " << optional_json(entry.val_dice).dump() << '\n';
    result.history.push_back(entry);
  }
  if (!fs::exists(result.best_checkpoint) && fs::exists(result.last_checkpoint))
    fs::copy_file(result.last_checkpoint, result.best_checkpoint, fs::copy_options::overwrite_existing);
  return result;
}

TrainSummary run_training(RecordStore& store, const RunConfig& config, const TrainOptions& options) {
  config.validate();
  TrainSummary summary;
  summary.split = make_split(store.manifest().subjects(), config.split.test_fraction, config.split.k_folds, config.seed);
  const fs::path out = config.output_dir;
  fs::create_directories(out);

  json folds = json::array();
  for (const auto& f : summary.split.folds) folds.push_back(f);
  const json split{{"seed", config.seed},
                   {"train_subjects", summary.split.train_subjects},
                   {"test_subjects", summary.split.test_subjects},
                   {"folds", folds}};
  std::ofstream(out / "split.json") << split.dump(2) << '\n';

  const std::set<std::string> train_set(summary.split.train_subjects.begin(), summary.split.train_subjects.end());
  check_records_fit(store, store.indices_for(train_set), config.model);
  store.guard_subjects({summary.split.test_subjects.begin(), summary.split.test_subjects.end()});
  try {
    const int k = config.split.k_folds;
    for (int f = 0; f < k; ++f) {
      std::set<std::string> val_subjects, fit_subjects;
      for (int g = 0; g < k; ++g)
        for (const auto& s : summary.split.folds[static_cast<std::size_t>(g)])
          (k > 1 && g == f ? val_subjects : fit_subjects).insert(s);
      const auto dir = k > 1 ? out / ("fold" + std::to_string(f)) : out;
      TrainOptions fold_options = options;
      if (k > 1 && options.resume) {
        const auto ckpt = dir / "last.ckpt";
        fold_options.resume = fs::exists(ckpt) ? std::optional<fs::path>(ckpt) : std::nullopt;
      }
      summary.folds.push_back(
          train_fold(store, config, f, store.indices_for(fit_subjects), store.indices_for(val_subjects), dir, fold_options));
    }
  } catch (...) {
    store.clear_guard();
    throw;
  }
  store.clear_guard();
  return summary;
}

}  // namespace ear
