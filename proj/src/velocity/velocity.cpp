#include "ear/velocity.hpp"

#include <array>
#include <charconv>
#include <cmath>

namespace ear {

namespace {

struct Component {
  std::vector<std::int64_t> pixels;
  bool touches_border = false;
};

/// Connected components of pixels where `plane[i] == value`, in row-major discovery order.
std::vector<Component> components(const std::uint8_t* plane, std::int64_t h, std::int64_t w, std::uint8_t value,
                                  bool eight_connected) {
  std::vector<Component> out;
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(h * w), 0);
  std::vector<std::int64_t> stack;
  for (std::int64_t start = 0; start < h * w; ++start) {
    if (plane[start] != value || seen[static_cast<std::size_t>(start)]) continue;
    Component comp;
    seen[static_cast<std::size_t>(start)] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const auto p = stack.back();
      stack.pop_back();
      comp.pixels.push_back(p);
      const auto r = p / w, c = p % w;
      if (r == 0 || c == 0 || r == h - 1 || c == w - 1) comp.touches_border = true;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          if ((dr == 0 && dc == 0) || (!eight_connected && dr != 0 && dc != 0)) continue;
          const auto rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
          const auto q = rr * w + cc;
          if (plane[q] != value || seen[static_cast<std::size_t>(q)]) continue;
          seen[static_cast<std::size_t>(q)] = 1;
          stack.push_back(q);
        }
    }
    out.push_back(std::move(comp));
  }
  return out;
}

/// Index of the largest component (first on ties) among those accepted by `keep`, or -1.
template <class Pred>
std::int64_t largest(const std::vector<Component>& comps, Pred keep) {
  std::int64_t best = -1;
  for (std::size_t i = 0; i < comps.size(); ++i)
    if (keep(comps[i]) && (best < 0 || comps[i].pixels.size() > comps[static_cast<std::size_t>(best)].pixels.size()))
      best = static_cast<std::int64_t>(i);
  return best;
}

void append_value(std::string& line, const std::optional<double>& v) {
  line += ',';
  if (!v) return;
  std::array<char, 32> buf;
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), *v);
  line.append(buf.data(), res.ptr);
}

}  // namespace

BinaryMask postprocess_mask(const BinaryMask& mask) {
  if (mask.shape.size() != 3) throw ShapeError("postprocess_mask: expected [T,H,W], got " + shape_str(mask.shape));
  const auto T = mask.shape[0], H = mask.shape[1], W = mask.shape[2];
  BinaryMask out(mask.shape);
  for (std::int64_t t = 0; t < T; ++t) {
    const std::uint8_t* in = mask.values.data() + t * H * W;
    std::uint8_t* dst = out.values.data() + t * H * W;
    const auto fg = components(in, H, W, 1, false);
    const auto keep = largest(fg, [](const Component&) { return true; });
    if (keep < 0) continue;
    for (auto p : fg[static_cast<std::size_t>(keep)].pixels) dst[p] = 1;

    const auto bg = components(dst, H, W, 0, true);
    const auto cavity = largest(bg, [](const Component& c) { return !c.touches_border; });
    for (std::size_t i = 0; i < bg.size(); ++i)
      if (!bg[i].touches_border && static_cast<std::int64_t>(i) != cavity)
        for (auto p : bg[i].pixels) dst[p] = 1;
  }
  return out;
}

Centroid mask_centroid(const BinaryMask& mask, std::int64_t frame) {
  std::int64_t h, w, offset = 0;
  if (mask.shape.size() == 2) {
    h = mask.shape[0];
    w = mask.shape[1];
  } else if (mask.shape.size() == 3) {
    if (frame < 0 || frame >= mask.shape[0]) throw ShapeError("mask_centroid: frame " + std::to_string(frame) + " out of range");
    h = mask.shape[1];
    w = mask.shape[2];
    offset = frame * h * w;
  } else {
    throw ShapeError("mask_centroid: expected [H,W] or [T,H,W], got " + shape_str(mask.shape));
  }
  double sr = 0, sc = 0;
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < h * w; ++i)
    if (mask[offset + i]) {
      sr += static_cast<double>(i / w);
      sc += static_cast<double>(i % w);
      ++n;
    }
  if (n == 0) throw EmptyMaskError("mask_centroid: frame " + std::to_string(frame) + " is empty");
  return {sr / static_cast<double>(n), sc / static_cast<double>(n)};
}

VelocityCurves global_velocity_curves(const CineRecord& record, const BinaryMask& mask) {
  const auto T = record.frames(), H = record.height(), W = record.width();
  if (mask.shape != Shape{T, H, W})
    throw ShapeError("global_velocity_curves: mask " + shape_str(mask.shape) + " does not match record " +
                     shape_str(record.image.shape()));
  const auto plane = H * W;
  const auto& img = record.image.buffer();
  const auto value = [&](std::int64_t ch, std::int64_t t, std::int64_t i) {
    return img.get(static_cast<std::size_t>((ch * T + t) * plane + i));
  };
  VelocityCurves curves;
  curves.longitudinal.resize(static_cast<std::size_t>(T));
  curves.radial.resize(static_cast<std::size_t>(T));
  curves.circumferential.resize(static_cast<std::size_t>(T));
  for (std::int64_t t = 0; t < T; ++t) {
    Centroid centre;
    try {
      centre = mask_centroid(mask, t);
    } catch (const EmptyMaskError&) {
      continue;
    }
    double vz = 0, radial = 0, circ = 0;
    std::int64_t n = 0, n_plane = 0;
    for (std::int64_t i = 0; i < plane; ++i) {
      if (!mask[t * plane + i]) continue;
      vz += value(3, t, i);
      ++n;
      const double dr = (static_cast<double>(i / W) - centre.row) * record.spacing_mm[0];
      const double dc = (static_cast<double>(i % W) - centre.col) * record.spacing_mm[1];
      const double norm = std::hypot(dr, dc);
      if (norm < 1e-9) continue;
      const double ur = dr / norm, uc = dc / norm;
      const double v_row = value(2, t, i), v_col = value(1, t, i);
      radial += v_row * ur + v_col * uc;
      circ += -v_row * uc + v_col * ur;
      ++n_plane;
    }
    const auto k = static_cast<std::size_t>(t);
    curves.longitudinal[k] = vz / static_cast<double>(n);
    if (n_plane > 0) {
      curves.radial[k] = radial / static_cast<double>(n_plane);
      curves.circumferential[k] = circ / static_cast<double>(n_plane);
    }
  }
  return curves;
}

CurvePeaks curve_peaks(const std::vector<std::optional<double>>& curve) {
  CurvePeaks p;
  bool any = false;
  for (std::size_t t = 0; t < curve.size(); ++t) {
    if (!curve[t]) continue;
    const double v = *curve[t];
    const auto frame = static_cast<std::int64_t>(t);
    if (!any || v > p.max.value) p.max = {v, frame};
    if (!any || v < p.min.value) p.min = {v, frame};
    any = true;
  }
  if (!any) throw EmptyCurveError("curve has no non-missing frames");
  return p;
}

PeakVelocities peak_velocities(const VelocityCurves& curves) {
  return {curve_peaks(curves.longitudinal), curve_peaks(curves.radial), curve_peaks(curves.circumferential)};
}

CurveDifference compare_curve(const std::vector<std::optional<double>>& automatic,
                              const std::vector<std::optional<double>>& manual) {
  if (automatic.size() != manual.size())
    throw ShapeError("curve_comparison: " + std::to_string(automatic.size()) + " vs " + std::to_string(manual.size()) +
                     " frames");
  CurveDifference d;
  double ss = 0;
  for (std::size_t t = 0; t < automatic.size(); ++t) {
    if (!automatic[t] || !manual[t]) continue;
    const double diff = *automatic[t] - *manual[t];
    ss += diff * diff;
    ++d.frames_compared;
  }
  if (d.frames_compared == 0) throw EmptyCurveError("curve_comparison: no frame present in both curves");
  d.rms = std::sqrt(ss / static_cast<double>(d.frames_compared));
  const auto pa = curve_peaks(automatic), pm = curve_peaks(manual);
  d.max_delta = pa.max.value - pm.max.value;
  d.min_delta = pa.min.value - pm.min.value;
  return d;
}

CurveComparison curve_comparison(const VelocityCurves& automatic, const VelocityCurves& manual) {
  return {compare_curve(automatic.longitudinal, manual.longitudinal), compare_curve(automatic.radial, manual.radial),
          compare_curve(automatic.circumferential, manual.circumferential)};
}

void write_curves_csv(const VelocityCurves& curves, std::ostream& out) {
  out << "frame,longitudinal_cm_s,radial_cm_s,circumferential_cm_s\n";
  for (std::size_t t = 0; t < curves.frames(); ++t) {
    std::string line = std::to_string(t);
    append_value(line, curves.longitudinal[t]);
    append_value(line, curves.radial[t]);
    append_value(line, curves.circumferential[t]);
    out << line << '\n';
  }
}

}  // namespace ear
