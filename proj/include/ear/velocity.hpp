#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "ear/data.hpp"
#include "ear/mask.hpp"

namespace ear {

/// Per frame of a [T,H,W] mask: keep the largest 4-connected foreground component, then fill
/// every enclosed background region (8-connected, not touching the border) except the largest.
BinaryMask postprocess_mask(const BinaryMask& mask);

struct Centroid {
  double row = 0.0;
  double col = 0.0;
};

/// Mean foreground pixel coordinate of an [H,W] mask, or of frame `frame` of a [T,H,W] mask.
/// Throws EmptyMaskError if the frame is empty.
Centroid mask_centroid(const BinaryMask& mask, std::int64_t frame = 0);

/// Global curves in cm/s; std::nullopt marks a frame without usable mask pixels.
struct VelocityCurves {
  std::vector<std::optional<double>> longitudinal;
  std::vector<std::optional<double>> radial;           // positive outward from the centroid
  std::vector<std::optional<double>> circumferential;  // positive counter-clockwise in (row, col)
  std::optional<std::vector<double>> frame_times_ms;

  std::size_t frames() const { return longitudinal.size(); }
};

/// Projects the in-plane velocity of each mask pixel onto the radial and tangential unit
/// vectors about the frame's centroid (physical mm via spacing) and averages over the mask.
/// Pixels within 1e-9 mm of the centroid are left out of the in-plane means.
VelocityCurves global_velocity_curves(const CineRecord& record, const BinaryMask& mask);

struct Extremum {
  double value = 0.0;
  std::int64_t frame = 0;
};

struct CurvePeaks {
  Extremum max;
  Extremum min;
};

struct PeakVelocities {
  CurvePeaks longitudinal, radial, circumferential;
};

/// First-occurrence max/min over non-missing frames. EmptyCurveError if a curve has none.
CurvePeaks curve_peaks(const std::vector<std::optional<double>>& curve);
PeakVelocities peak_velocities(const VelocityCurves& curves);

struct CurveDifference {
  double rms = 0.0;        // over frames present in both curves
  double max_delta = 0.0;  // peak max(auto) - max(manual)
  double min_delta = 0.0;  // peak min(auto) - min(manual)
  std::int64_t frames_compared = 0;
};

struct CurveComparison {
  CurveDifference longitudinal, radial, circumferential;
};

CurveDifference compare_curve(const std::vector<std::optional<double>>& automatic,
                              const std::vector<std::optional<double>>& manual);
/// ShapeError on different frame counts; EmptyCurveError when a curve pair shares no frame.
CurveComparison curve_comparison(const VelocityCurves& automatic, const VelocityCurves& manual);

/// `frame,longitudinal_cm_s,radial_cm_s,circumferential_cm_s`, missing values as empty fields.
void write_curves_csv(const VelocityCurves& curves, std::ostream& out);

}  // namespace ear
