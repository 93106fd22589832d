#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "ear/data.hpp"
#include "ear/ops.hpp"

namespace ear {

namespace {

enum Tissue : std::uint8_t { background, myocardium, cavity };

std::string numbered(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%03d", prefix, i);
  return buf;
}

}  // namespace

std::vector<CineRecord> generate_phantom(const PhantomOptions& o) {
  if (o.n_records < 1) throw ConfigError("phantom: n_records must be >= 1");
  if (o.frames < 1) throw ConfigError("phantom: frames must be >= 1");
  if (o.height < 16 || o.width < 16 || o.height % 2 || o.width % 2)
    throw ConfigError("phantom: H and W must be even and >= 16");
  if (o.records_per_subject < 1) throw ConfigError("phantom: records_per_subject must be >= 1");

  const auto T = o.frames, H = o.height, W = o.width;
  const auto plane = H * W;
  const double s = static_cast<double>(std::min(H, W));
  const double two_pi = 2.0 * std::numbers::pi;
  Rng rng(o.seed);
  std::vector<CineRecord> out;

  for (int n = 0; n < o.n_records; ++n) {
    CineRecord rec;
    rec.subject_id = numbered("phantom-", n / o.records_per_subject);
    rec.slice_id = numbered("slice-", n % o.records_per_subject);
    rec.spacing_mm = {o.spacing_mm, o.spacing_mm};
    rec.venc_cm_s = {o.venc_cm_s, o.venc_cm_s, o.venc_cm_s};

    const double row0 = H / 2.0 + rng.uniform(-s / 16, s / 16);
    const double col0 = W / 2.0 + rng.uniform(-s / 16, s / 16);
    const double inner0 = s * rng.uniform(0.14, 0.2);
    const double thickness = std::max(3.0, s * rng.uniform(0.07, 0.1));
    const double pulse = rng.uniform(0.08, 0.15);
    const double drift = s * rng.uniform(0.02, 0.05);
    const double drift_phase = rng.uniform(0.0, two_pi);

    std::vector<std::uint8_t> tissue(static_cast<std::size_t>(T * plane));
    for (std::int64_t t = 0; t < T; ++t) {
      const double ph = two_pi * static_cast<double>(t) / static_cast<double>(T);
      const double cr = row0 + drift * std::cos(ph + drift_phase);
      const double cc = col0 + drift * std::sin(ph + drift_phase);
      const double inner = inner0 * (1.0 + pulse * std::sin(ph));
      for (std::int64_t r = 0; r < H; ++r)
        for (std::int64_t c = 0; c < W; ++c) {
          const double d = std::hypot(static_cast<double>(r) - cr, static_cast<double>(c) - cc);
          tissue[static_cast<std::size_t>(t * plane + r * W + c)] =
              d < inner ? cavity : (d < inner + thickness ? myocardium : background);
        }
    }

    rec.mask = BinaryMask({T, H, W});
    for (std::size_t i = 0; i < tissue.size(); ++i) rec.mask.values[i] = tissue[i] == myocardium;

    std::vector<float> image(static_cast<std::size_t>(kRecordChannels * T * plane), 0.0f);
    const auto px = [&](std::int64_t ch, std::int64_t t, std::int64_t i) -> float& {
      return image[static_cast<std::size_t>((ch * T + t) * plane + i)];
    };

    // Magnitude: 3x3 box-smoothed tissue intensities plus noise.
    constexpr double level[3] = {0.2, 0.4, 0.8};
    for (std::int64_t t = 0; t < T; ++t)
      for (std::int64_t r = 0; r < H; ++r)
        for (std::int64_t c = 0; c < W; ++c) {
          double acc = 0.0;
          for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
              const auto rr = std::clamp<std::int64_t>(r + dr, 0, H - 1);
              const auto cc = std::clamp<std::int64_t>(c + dc, 0, W - 1);
              acc += level[tissue[static_cast<std::size_t>(t * plane + rr * W + cc)]];
            }
          px(0, t, r * W + c) = static_cast<float>(acc / 9.0 + o.magnitude_noise * rng.normal());
        }

    // Velocities about the per-frame mask centroid, in physical coordinates.
    for (std::int64_t t = 0; t < T; ++t) {
      const double ph = two_pi * static_cast<double>(t) / static_cast<double>(T);
      const double vr = o.radial_cm_s * std::cos(ph);
      const double vc = o.circumferential_cm_s * std::sin(ph);
      const double vz = o.longitudinal_cm_s * std::cos(ph);
      double sr = 0, sc = 0;
      std::int64_t count = 0;
      for (std::int64_t i = 0; i < plane; ++i)
        if (rec.mask.values[static_cast<std::size_t>(t * plane + i)]) {
          sr += static_cast<double>(i / W);
          sc += static_cast<double>(i % W);
          ++count;
        }
      const double cr = sr / static_cast<double>(count), cc = sc / static_cast<double>(count);
      for (std::int64_t i = 0; i < plane; ++i) {
        if (!rec.mask.values[static_cast<std::size_t>(t * plane + i)]) continue;
        const double dr = (static_cast<double>(i / W) - cr) * o.spacing_mm;
        const double dc = (static_cast<double>(i % W) - cc) * o.spacing_mm;
        const double norm = std::hypot(dr, dc);
        px(3, t, i) = static_cast<float>(vz);
        if (norm < 1e-9) continue;
        const double ur = dr / norm, uc = dc / norm;  // radial unit; tangential is (-uc, ur)
        px(1, t, i) = static_cast<float>(vr * uc + vc * ur);
        px(2, t, i) = static_cast<float>(vr * ur - vc * uc);
      }
    }
    for (std::int64_t ch = 1; ch < kRecordChannels; ++ch) {
      const auto venc = static_cast<float>(o.venc_cm_s);
      for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t i = 0; i < plane; ++i) {
          float& v = px(ch, t, i);
          v = std::clamp(static_cast<float>(v + o.velocity_noise * rng.normal()), -venc, venc);
        }
    }

    rec.image = Tensor::from_buffer({kRecordChannels, T, H, W}, Buffer(std::move(image)));
    out.push_back(std::move(rec));
  }
  return out;
}

Tensor prepare_input(const CineRecord& record, DType dtype) {
  const auto T = record.frames(), H = record.height(), W = record.width();
  const auto plane = T * H * W;
  const auto& src = record.image.buffer();
  double lo = src.get(0), hi = lo;
  for (std::int64_t i = 0; i < plane; ++i) {
    lo = std::min(lo, src.get(static_cast<std::size_t>(i)));
    hi = std::max(hi, src.get(static_cast<std::size_t>(i)));
  }
  const double span = hi - lo;
  Buffer out(dtype, static_cast<std::size_t>(kRecordChannels * plane));
  for (std::int64_t i = 0; i < plane; ++i)
    out.set(static_cast<std::size_t>(i), span > 0 ? (src.get(static_cast<std::size_t>(i)) - lo) / span : 0.0);
  for (std::int64_t ch = 1; ch < kRecordChannels; ++ch) {
    const double venc = record.venc_cm_s[static_cast<std::size_t>(ch - 1)];
    for (std::int64_t i = 0; i < plane; ++i) {
      const auto k = static_cast<std::size_t>(ch * plane + i);
      out.set(k, src.get(k) / venc);
    }
  }
  return Tensor::from_buffer({1, kRecordChannels, T, H, W}, std::move(out));
}

Tensor prepare_target(const CineRecord& record, DType dtype) {
  Tensor t = record.mask.to_tensor(dtype);
  return reshape(t, {1, record.frames(), record.height(), record.width()});
}

}  // namespace ear
