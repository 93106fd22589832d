#include <algorithm>
#include <cmath>
#include <set>

#include "ear/data.hpp"

namespace ear {

namespace {

/// One counter-clockwise quarter turn of `planes` stacked H x W planes: (r, c) -> (W-1-c, r).
template <class T>
std::vector<T> quarter_turn(const std::vector<T>& src, std::int64_t planes, std::int64_t h, std::int64_t w) {
  std::vector<T> dst(src.size());
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* in = src.data() + p * h * w;
    T* out = dst.data() + p * h * w;
    for (std::int64_t r = 0; r < h; ++r)
      for (std::int64_t c = 0; c < w; ++c) out[(w - 1 - c) * h + r] = in[r * w + c];
  }
  return dst;
}

}  // namespace

CineRecord rotate_record(const CineRecord& record, int quarter_turns) {
  CineRecord out = record;
  const int turns = ((quarter_turns % 4) + 4) % 4;
  if (turns == 0) return out;
  const auto c = record.image.size(0), t = record.frames();
  auto h = record.height(), w = record.width();
  std::vector<float> pixels;
  {
    const Buffer b = record.image.buffer().converted(DType::f32);
    pixels.assign(b.view<float>().begin(), b.view<float>().end());
  }
  auto mask = record.mask.values;
  for (int k = 0; k < turns; ++k) {
    pixels = quarter_turn(pixels, c * t, h, w);
    mask = quarter_turn(mask, t, h, w);
    std::swap(h, w);
  }
  out.image = Tensor::from_buffer({c, t, h, w}, Buffer(std::move(pixels)));
  out.mask = BinaryMask({t, h, w}, std::move(mask));
  // Spacing follows the pixel axes.
  if (turns % 2) std::swap(out.spacing_mm[0], out.spacing_mm[1]);
  return out;
}

CineRecord random_rotation(const CineRecord& record, Rng& rng) {
  return rotate_record(record, static_cast<int>(rng.below(4)));
}

SplitPlan make_split(std::vector<std::string> subject_ids, double test_fraction, int k, std::uint64_t seed) {
  std::sort(subject_ids.begin(), subject_ids.end());
  subject_ids.erase(std::unique(subject_ids.begin(), subject_ids.end()), subject_ids.end());
  if (k < 1) throw ConfigError("k_folds must be >= 1, got " + std::to_string(k));
  if (!(test_fraction >= 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction must lie in [0, 1), got " + std::to_string(test_fraction));
  const auto n = static_cast<std::int64_t>(subject_ids.size());
  if (n < k + 1)
    throw ConfigError("split needs at least k+1 = " + std::to_string(k + 1) + " subjects, got " + std::to_string(n));
  const auto n_test = static_cast<std::int64_t>(std::floor(static_cast<double>(n) * test_fraction + 0.5));
  const auto n_train = n - n_test;
  if (n_train < k)
    throw ConfigError(std::to_string(n_train) + " training subjects cannot fill " + std::to_string(k) + " folds");

  Rng rng(seed);
  rng.shuffle(subject_ids);
  SplitPlan plan;
  plan.test_subjects.assign(subject_ids.begin(), subject_ids.begin() + n_test);
  plan.train_subjects.assign(subject_ids.begin() + n_test, subject_ids.end());
  plan.folds.resize(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < plan.train_subjects.size(); ++i)
    plan.folds[i % static_cast<std::size_t>(k)].push_back(plan.train_subjects[i]);
  std::sort(plan.test_subjects.begin(), plan.test_subjects.end());
  std::sort(plan.train_subjects.begin(), plan.train_subjects.end());
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

}  // namespace ear
