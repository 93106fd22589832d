#include <doctest.h>

#include <cmath>
#include <functional>
#include <sstream>

#include "ear/velocity.hpp"
#include "test_util.hpp"

using namespace ear;

namespace {

using Field = std::function<std::array<double, 3>(std::int64_t t, std::int64_t r, std::int64_t c)>;

/// Record whose channels (v_x, v_y, v_z) come from `field`; magnitude is 1.
CineRecord field_record(const BinaryMask& mask, const Field& field, std::array<double, 2> spacing = {1.0, 1.0}) {
  const auto T = mask.shape[0], H = mask.shape[1], W = mask.shape[2];
  std::vector<double> v(static_cast<std::size_t>(4 * T * H * W), 1.0);
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t r = 0; r < H; ++r)
      for (std::int64_t c = 0; c < W; ++c) {
        const auto f = field(t, r, c);
        for (std::int64_t ch = 1; ch < 4; ++ch)
          v[static_cast<std::size_t>(((ch * T + t) * H + r) * W + c)] = f[static_cast<std::size_t>(ch - 1)];
      }
  CineRecord rec;
  rec.subject_id = "s";
  rec.slice_id = "a";
  rec.image = Tensor::from_values({4, T, H, W}, v, DType::f64);
  rec.mask = mask;
  rec.spacing_mm = spacing;
  return rec;
}

BinaryMask ring(std::int64_t t, std::int64_t h, std::int64_t w, double cr, double cc, double r_in, double r_out) {
  BinaryMask m({t, h, w});
  for (std::int64_t f = 0; f < t; ++f)
    for (std::int64_t r = 0; r < h; ++r)
      for (std::int64_t c = 0; c < w; ++c) {
        const double d = std::hypot(r - cr, c - cc);
        m.at(f, r, c) = d >= r_in && d <= r_out;
      }
  return m;
}

void check_curves_close(const VelocityCurves& a, const VelocityCurves& b, double tol) {
  REQUIRE(a.frames() == b.frames());
  for (std::size_t t = 0; t < a.frames(); ++t) {
    for (auto [x, y] : {std::pair{a.longitudinal[t], b.longitudinal[t]}, std::pair{a.radial[t], b.radial[t]},
                        std::pair{a.circumferential[t], b.circumferential[t]}}) {
      REQUIRE(x.has_value() == y.has_value());
      if (x) CHECK(std::abs(*x - *y) <= tol);
    }
  }
}

}  // namespace

TEST_CASE("postprocess leaves a clean annulus unchanged") {
  const auto m = ring(2, 24, 24, 11.5, 11.5, 4, 8);
  CHECK(postprocess_mask(m) == m);
}

TEST_CASE("postprocess removes specks and fills gaps") {
  const auto clean = ring(1, 24, 24, 11.5, 11.5, 4, 8);
  auto noisy = clean;
  noisy.at(0, 0, 0) = noisy.at(0, 0, 1) = 1;
  noisy.at(0, 22, 22) = 1;
  CHECK(postprocess_mask(noisy) == clean);

  auto holed = clean;
  holed.at(0, 11, 3) = 0;
  holed.at(0, 2, 11) = 0;
  const auto fixed = postprocess_mask(holed);
  CHECK(fixed == clean);

  auto specked = holed;
  specked.at(0, 0, 23) = 1;
  CHECK(postprocess_mask(specked) == clean);
}

TEST_CASE("postprocess keeps the cavity") {
  BinaryMask m = ring(1, 24, 24, 11.5, 11.5, 4, 8);
  const auto out = postprocess_mask(m);
  CHECK(out.at(0, 11, 11) == 0);
  CHECK(out.at(0, 12, 12) == 0);
  BinaryMask empty({2, 5, 5});
  CHECK(postprocess_mask(empty) == empty);
  CHECK_THROWS_AS(postprocess_mask(BinaryMask({5, 5})), ShapeError);
}

TEST_CASE("postprocess is idempotent and stays inside the bounding box") {
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    BinaryMask m({2, 16, 16});
    for (auto& v : m.values) v = rng.uniform() < 0.45;
    const auto once = postprocess_mask(m);
    CHECK(postprocess_mask(once) == once);
    for (std::int64_t t = 0; t < 2; ++t) {
      std::int64_t r0 = 16, r1 = -1, c0 = 16, c1 = -1;
      for (std::int64_t r = 0; r < 16; ++r)
        for (std::int64_t c = 0; c < 16; ++c)
          if (m.at(t, r, c)) {
            r0 = std::min(r0, r);
            r1 = std::max(r1, r);
            c0 = std::min(c0, c);
            c1 = std::max(c1, c);
          }
      for (std::int64_t r = 0; r < 16; ++r)
        for (std::int64_t c = 0; c < 16; ++c)
          if (once.at(t, r, c)) {
            CHECK(r >= r0);
            CHECK(r <= r1);
            CHECK(c >= c0);
            CHECK(c <= c1);
          }
    }
  }
}

TEST_CASE("centroid") {
  BinaryMask m({3, 3});
  m[0] = m[8] = 1;
  const auto c = mask_centroid(m);
  CHECK(c.row == 1.0);
  CHECK(c.col == 1.0);
  BinaryMask t({2, 2, 4});
  t.at(1, 1, 3) = 1;
  t.at(1, 0, 3) = 1;
  CHECK(mask_centroid(t, 1).row == 0.5);
  CHECK(mask_centroid(t, 1).col == 3.0);
  CHECK_THROWS_AS(mask_centroid(t, 0), EmptyMaskError);
  CHECK_THROWS_AS(mask_centroid(t, 2), ShapeError);
}

TEST_CASE("velocity curves of simple fields") {
  const auto m = ring(3, 20, 20, 9.5, 9.5, 3, 7);
  const auto zero = global_velocity_curves(field_record(m, [](auto, auto, auto) { return std::array<double, 3>{}; }), m);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(*zero.longitudinal[t] == 0.0);
    CHECK(*zero.radial[t] == 0.0);
    CHECK(*zero.circumferential[t] == 0.0);
  }

  const std::array<double, 2> spacing{0.8, 1.3};
  const auto radial_field = [&](std::int64_t t, std::int64_t r, std::int64_t c) {
    const double dr = (r - 9.5) * spacing[0], dc = (c - 9.5) * spacing[1], n = std::hypot(dr, dc);
    const double s = 5.0 + t;
    return std::array<double, 3>{s * dc / n, s * dr / n, 2.0 * t};
  };
  const auto radial = global_velocity_curves(field_record(m, radial_field, spacing), m);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(*radial.radial[t] == doctest::Approx(5.0 + t).epsilon(1e-12));
    CHECK(std::abs(*radial.circumferential[t]) < 1e-12);
    CHECK(*radial.longitudinal[t] == doctest::Approx(2.0 * t));
  }

  const auto swirl_field = [&](std::int64_t, std::int64_t r, std::int64_t c) {
    const double dr = (r - 9.5) * spacing[0], dc = (c - 9.5) * spacing[1], n = std::hypot(dr, dc);
    return std::array<double, 3>{3.0 * dr / n, -3.0 * dc / n, 0.0};
  };
  const auto swirl = global_velocity_curves(field_record(m, swirl_field, spacing), m);
  CHECK(*swirl.circumferential[1] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(std::abs(*swirl.radial[1]) < 1e-12);
}

TEST_CASE("velocity curves are translation invariant") {
  Rng rng(2);
  std::vector<double> vals(3 * 2 * 16 * 16);
  for (auto& v : vals) v = rng.uniform(-10, 10);
  const auto base = ring(2, 24, 24, 7.5, 7.5, 3, 6);
  const auto moved = ring(2, 24, 24, 12.5, 10.5, 3, 6);
  const auto f = [&](std::int64_t dr, std::int64_t dc) {
    return [&, dr, dc](std::int64_t t, std::int64_t r, std::int64_t c) {
      const auto rr = r - dr, cc = c - dc;
      if (rr < 0 || cc < 0 || rr >= 16 || cc >= 16) return std::array<double, 3>{};
      const auto k = static_cast<std::size_t>((t * 16 + rr) * 16 + cc);
      return std::array<double, 3>{vals[k], vals[512 + k], vals[1024 + k]};
    };
  };
  check_curves_close(global_velocity_curves(field_record(base, f(0, 0)), base),
                     global_velocity_curves(field_record(moved, f(5, 3)), moved), 1e-10);
}

TEST_CASE("velocity curves are linear in the field") {
  Rng rng(3);
  const auto m = ring(2, 16, 16, 7.5, 7.5, 2, 6);
  std::vector<double> a(3 * 2 * 256), b(3 * 2 * 256);
  for (auto& v : a) v = rng.uniform(-5, 5);
  for (auto& v : b) v = rng.uniform(-5, 5);
  const auto make = [&](double wa, double wb) {
    return field_record(m, [&, wa, wb](std::int64_t t, std::int64_t r, std::int64_t c) {
      const auto k = static_cast<std::size_t>((t * 16 + r) * 16 + c);
      return std::array<double, 3>{wa * a[k] + wb * b[k], wa * a[512 + k] + wb * b[512 + k],
                                   wa * a[1024 + k] + wb * b[1024 + k]};
    });
  };
  const auto ca = global_velocity_curves(make(1, 0), m), cb = global_velocity_curves(make(0, 1), m);
  const auto mix = global_velocity_curves(make(2, -3), m);
  for (std::size_t t = 0; t < 2; ++t) {
    CHECK(*mix.radial[t] == doctest::Approx(2 * *ca.radial[t] - 3 * *cb.radial[t]).epsilon(1e-12));
    CHECK(*mix.circumferential[t] ==
          doctest::Approx(2 * *ca.circumferential[t] - 3 * *cb.circumferential[t]).epsilon(1e-12));
    CHECK(*mix.longitudinal[t] == doctest::Approx(2 * *ca.longitudinal[t] - 3 * *cb.longitudinal[t]).epsilon(1e-12));
  }
}

TEST_CASE("velocity curves under a half turn") {
  PhantomOptions opts;
  opts.n_records = 1;
  opts.height = opts.width = 48;
  opts.seed = 5;
  auto rec = generate_phantom(opts)[0];
  auto turned = rotate_record(rec, 2);
  const auto plane = rec.frames() * rec.height() * rec.width();
  for (std::int64_t i = plane; i < 3 * plane; ++i)
    turned.image.mutable_buffer().set(static_cast<std::size_t>(i), -turned.image.buffer().get(static_cast<std::size_t>(i)));
  check_curves_close(global_velocity_curves(rec, rec.mask), global_velocity_curves(turned, turned.mask), 1e-6);
}

TEST_CASE("phantom peaks are recovered from the ground truth mask") {
  PhantomOptions opts;
  opts.n_records = 2;
  opts.velocity_noise = 0.0;
  for (const auto& rec : generate_phantom(opts)) {
    const auto peaks = peak_velocities(global_velocity_curves(rec, rec.mask));
    CHECK(std::abs(peaks.longitudinal.max.value - opts.longitudinal_cm_s) <= 0.02 * opts.longitudinal_cm_s);
    CHECK(std::abs(peaks.longitudinal.min.value + opts.longitudinal_cm_s) <= 0.02 * opts.longitudinal_cm_s);
    CHECK(std::abs(peaks.radial.max.value - opts.radial_cm_s) <= 0.02 * opts.radial_cm_s);
    CHECK(std::abs(peaks.radial.min.value + opts.radial_cm_s) <= 0.02 * opts.radial_cm_s);
    CHECK(std::abs(peaks.circumferential.max.value - opts.circumferential_cm_s) <= 0.02 * opts.circumferential_cm_s);
    CHECK(std::abs(peaks.circumferential.min.value + opts.circumferential_cm_s) <= 0.02 * opts.circumferential_cm_s);
    CHECK(peaks.longitudinal.max.frame == 0);
    CHECK(peaks.longitudinal.min.frame == 4);
    CHECK(peaks.circumferential.max.frame == 2);
    CHECK(peaks.circumferential.min.frame == 6);
  }
}

TEST_CASE("empty frames are missing") {
  auto m = ring(3, 16, 16, 7.5, 7.5, 2, 6);
  for (std::int64_t i = 256; i < 512; ++i) m[i] = 0;
  const auto c = global_velocity_curves(field_record(m, [](auto, auto, auto) { return std::array<double, 3>{1, 1, 1}; }), m);
  CHECK(c.longitudinal[0].has_value());
  CHECK_FALSE(c.longitudinal[1].has_value());
  CHECK_FALSE(c.radial[1].has_value());
  CHECK_FALSE(c.circumferential[1].has_value());
  CHECK(c.longitudinal[2].has_value());
  CHECK_THROWS_AS(global_velocity_curves(field_record(m, [](auto, auto, auto) { return std::array<double, 3>{}; }),
                                         BinaryMask({3, 16, 15})),
                  ShapeError);

  BinaryMask single({1, 5, 5});
  single.at(0, 2, 2) = 1;
  const auto s = global_velocity_curves(field_record(single, [](auto, auto, auto) { return std::array<double, 3>{1, 2, 3}; }), single);
  CHECK(*s.longitudinal[0] == 3.0);
  CHECK_FALSE(s.radial[0].has_value());
}

TEST_CASE("curve peaks") {
  const std::vector<std::optional<double>> c{1.0, std::nullopt, 3.0, -2.0, 3.0, -2.0};
  const auto p = curve_peaks(c);
  CHECK(p.max.value == 3.0);
  CHECK(p.max.frame == 2);
  CHECK(p.min.value == -2.0);
  CHECK(p.min.frame == 3);
  CHECK_THROWS_AS(curve_peaks({std::nullopt, std::nullopt}), EmptyCurveError);
  CHECK_THROWS_AS(curve_peaks({}), EmptyCurveError);
}

TEST_CASE("curve comparison") {
  const std::vector<std::optional<double>> a{1.0, 2.0, std::nullopt, 4.0};
  const auto same = compare_curve(a, a);
  CHECK(same.rms == 0.0);
  CHECK(same.max_delta == 0.0);
  CHECK(same.frames_compared == 3);

  std::vector<std::optional<double>> shifted;
  for (auto v : a) shifted.push_back(v ? std::optional<double>(*v - 0.75) : std::nullopt);
  const auto d = compare_curve(a, shifted);
  CHECK(d.rms == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(d.max_delta == doctest::Approx(0.75));
  CHECK(d.min_delta == doctest::Approx(0.75));

  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::optional<double>> x(9), y(9);
    double ss = 0;
    int n = 0;
    for (std::size_t i = 0; i < 9; ++i) {
      if (rng.uniform() < 0.8) x[i] = rng.uniform(-5, 5);
      if (rng.uniform() < 0.8) y[i] = rng.uniform(-5, 5);
      if (x[i] && y[i]) {
        ss += (*x[i] - *y[i]) * (*x[i] - *y[i]);
        ++n;
      }
    }
    if (n == 0) continue;
    CHECK(std::abs(compare_curve(x, y).rms - std::sqrt(ss / n)) < 1e-12);
  }

  CHECK_THROWS_AS(compare_curve(a, {1.0}), ShapeError);
  CHECK_THROWS_AS(compare_curve({std::nullopt, 1.0}, {2.0, std::nullopt}), EmptyCurveError);
}

TEST_CASE("curves csv") {
  VelocityCurves c;
  c.longitudinal = {1.5, std::nullopt};
  c.radial = {-2.0, std::nullopt};
  c.circumferential = {0.25, std::nullopt};
  std::ostringstream out;
  write_curves_csv(c, out);
  CHECK(out.str() == "frame,longitudinal_cm_s,radial_cm_s,circumferential_cm_s\n0,1.5,-2,0.25\n1,,,\n");
}
