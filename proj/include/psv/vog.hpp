#pragma once

// Low-rate video oculography used only to estimate sensor translation.
//
// Pupil and corneal reflection are found by thresholding and 4-connected
// component labeling. The sensor-induced part of the apparent pupil movement
// is separated from the eye-induced part through the different gains with
// which the corneal reflection follows the pupil under the two motions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <vector>

#include "psv/common.hpp"
#include "psv/scene.hpp"

namespace psv {

struct VogThresholds {
  double pupil = 0.15;
  double glint = 0.97;
  std::size_t min_pupil_px = 20;
};

/// Connected region with its weighted centroid.
struct Blob {
  std::size_t pixel_count = 0;
  Point2 centroid;
};

/// 4-connected components of the pixels where `weight` is positive. The
/// centroid of each component is weighted by `weight`.
inline std::vector<Blob> find_blobs(const Frame& frame, const std::function<double(double)>& weight) {
  const int w = frame.width, h = frame.height;
  std::vector<std::int32_t> label(frame.intensities.size(), -1);
  std::vector<Blob> blobs;
  std::vector<int> stack;
  for (int start = 0; start < w * h; ++start) {
    if (label[start] >= 0 || !(weight(frame.intensities[start]) > 0.0)) continue;
    const auto id = static_cast<std::int32_t>(blobs.size());
    double sw = 0.0, sx = 0.0, sy = 0.0;
    std::size_t count = 0;
    label[start] = id;
    stack.assign(1, start);
    while (!stack.empty()) {
      const int idx = stack.back();
      stack.pop_back();
      const int x = idx % w, y = idx / w;
      const double wt = weight(frame.intensities[idx]);
      sw += wt;
      sx += wt * x;
      sy += wt * y;
      ++count;
      const int nbr[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
      for (const auto& n : nbr) {
        if (n[0] < 0 || n[1] < 0 || n[0] >= w || n[1] >= h) continue;
        const int j = n[1] * w + n[0];
        if (label[j] >= 0 || !(weight(frame.intensities[j]) > 0.0)) continue;
        label[j] = id;
        stack.push_back(j);
      }
    }
    blobs.push_back({count, {sx / sw, sy / sw}});
  }
  return blobs;
}

struct Detection {
  Point2 px;
  bool valid = false;
};

/// Darkness-weighted centroid of the largest region below `threshold`.
inline Detection detect_pupil_center(const Frame& frame, double threshold, std::size_t min_pixels = 20) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("pupil threshold must lie in (0, 1)");
  const auto blobs = find_blobs(frame, [threshold](double v) { return threshold - v; });
  const auto largest = std::max_element(blobs.begin(), blobs.end(),
                                        [](const Blob& a, const Blob& b) { return a.pixel_count < b.pixel_count; });
  if (largest == blobs.end() || largest->pixel_count < min_pixels) return {};
  return {largest->centroid, true};
}

/// Every bright region above `threshold`, centroids weighted by the excess.
inline std::vector<Point2> detect_glints(const Frame& frame, double threshold) {
  const auto blobs = find_blobs(frame, [threshold](double v) { return v - threshold; });
  std::vector<Point2> out;
  out.reserve(blobs.size());
  for (const auto& b : blobs) out.push_back(b.centroid);
  return out;
}

/// The bright region nearest to the pupil center.
inline Detection detect_corneal_reflection(const Frame& frame, double threshold, Point2 pc) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("glint threshold must lie in (0, 1)");
  const auto glints = detect_glints(frame, threshold);
  if (glints.empty()) return {};
  const auto nearest = std::min_element(glints.begin(), glints.end(),
                                        [pc](Point2 a, Point2 b) { return distance(a, pc) < distance(b, pc); });
  return {*nearest, true};
}

struct TrackedFeatures {
  Point2 pc_px;
  Point2 cr_px;  // reflection nearest to the pupil center
  bool pc_valid = false;
  bool cr_valid = false;
  std::vector<Point2> glints;  // every detected reflection, left to right
  std::size_t cr_rank = 0;     // index of cr_px within glints
  double t = 0.0;

  bool valid() const { return pc_valid && cr_valid; }
};

inline TrackedFeatures track_features(const Frame& frame, const VogThresholds& thr, double t = 0.0) {
  TrackedFeatures f;
  f.t = t;
  const Detection pc = detect_pupil_center(frame, thr.pupil, thr.min_pupil_px);
  f.pc_valid = pc.valid;
  f.pc_px = pc.px;
  f.glints = detect_glints(frame, thr.glint);
  std::sort(f.glints.begin(), f.glints.end(), [](Point2 a, Point2 b) { return a.x < b.x; });
  if (pc.valid && !f.glints.empty()) {
    const auto nearest = std::min_element(f.glints.begin(), f.glints.end(), [&](Point2 a, Point2 b) {
      return distance(a, pc.px) < distance(b, pc.px);
    });
    f.cr_px = *nearest;
    f.cr_rank = static_cast<std::size_t>(nearest - f.glints.begin());
    f.cr_valid = true;
  }
  return f;
}

/// Eye and sensor movement gains with the reference frame they refer to.
struct GainModel {
  PerAxis<double> g_e;
  PerAxis<double> g_s;
  PerAxis<double> px_per_mm;
  TrackedFeatures reference;  // primary eye position, neutral pose

  void validate() const {
    for (Axis a : kAxes) {
      if (!(g_e[a] > 0.0 && g_e[a] < g_s[a] && g_s[a] < 1.2))
        throw InvalidArgument(std::string("gains must satisfy 0 < g_e < g_s < 1.2 on the ") + axis_name(a) + " axis");
      if (!(px_per_mm[a] > 0.0)) throw InvalidArgument("px_per_mm must be positive");
    }
    if (!reference.valid()) throw InvalidArgument("gain model reference features are invalid");
  }
};

/// Reference reflection corresponding to the tracked one. With the same set of
/// reflections visible, reflections keep their left-to-right order; otherwise
/// the reference glint whose offset from the reference pupil best matches the
/// current offset is taken.
inline std::optional<Point2> matching_reference_glint(const TrackedFeatures& current, const TrackedFeatures& reference) {
  if (reference.glints.empty()) return std::nullopt;
  if (current.glints.size() == reference.glints.size()) return reference.glints[current.cr_rank];
  const Point2 offset = current.cr_px - current.pc_px;
  return *std::min_element(reference.glints.begin(), reference.glints.end(), [&](Point2 a, Point2 b) {
    return distance(a - reference.pc_px, offset) < distance(b - reference.pc_px, offset);
  });
}

struct ShiftEstimate {
  double x_h = 0.0;  // mm
  double x_v = 0.0;  // mm
  double t = 0.0;
  bool stale = false;     // carried forward from an earlier frame
  bool reliable = true;   // magnitude within the configured bound

  double along(Axis axis) const { return axis == Axis::Horizontal ? x_h : x_v; }
};

/// Sensor-only component of a pupil displacement `d_pc` given the matching
/// reflection displacement `d_cr` (pixels).
inline double sensor_component_px(double d_pc, double d_cr, double g_e, double g_s) {
  return (d_cr - d_pc * g_e) / (g_s - g_e);
}

/// Sensor translation in mm from features tracked on one frame.
inline ShiftEstimate estimate_sensor_shift(const TrackedFeatures& features, const GainModel& gains,
                                           double max_shift_mm = 5.0) {
  if (!features.valid()) throw InvalidArgument("tracked features are invalid");
  const auto ref_cr = matching_reference_glint(features, gains.reference);
  if (!ref_cr) throw InvalidArgument("gain model reference has no corneal reflection");
  const Point2 d_pc = features.pc_px - gains.reference.pc_px;
  const Point2 d_cr = features.cr_px - *ref_cr;
  ShiftEstimate est;
  est.t = features.t;
  est.x_h = sensor_component_px(d_pc.x, d_cr.x, gains.g_e.h, gains.g_s.h) / gains.px_per_mm.h;
  est.x_v = sensor_component_px(d_pc.y, d_cr.y, gains.g_e.v, gains.g_s.v) / gains.px_per_mm.v;
  est.reliable = std::isfinite(est.x_h) && std::isfinite(est.x_v) && std::abs(est.x_h) <= max_shift_mm &&
                 std::abs(est.x_v) <= max_shift_mm;
  return est;
}

/// Stateful estimator: frames without valid features repeat the previous
/// estimate marked stale. Single writer.
class ShiftEstimator {
 public:
  explicit ShiftEstimator(GainModel gains, double max_shift_mm = 5.0)
      : gains_(std::move(gains)), max_shift_mm_(max_shift_mm) {
    gains_.validate();
  }

  ShiftEstimate update(const TrackedFeatures& features) {
    if (features.valid() && matching_reference_glint(features, gains_.reference)) {
      last_ = estimate_sensor_shift(features, gains_, max_shift_mm_);
      return last_;
    }
    ShiftEstimate carried = last_;
    carried.t = features.t;
    carried.stale = true;
    return carried;
  }

  const GainModel& gains() const { return gains_; }

 private:
  GainModel gains_;
  double max_shift_mm_;
  ShiftEstimate last_;
};

struct GainSweep {
  std::vector<double> eye_deg{-10.0, -7.5, -5.0, -2.5, 2.5, 5.0, 7.5, 10.0};
  std::vector<double> pose_mm{-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0};
  double pupil_radius = 1.5;
};

/// Simulates eye-only and sensor-only movements on the VOG scene and averages
/// dCR/dPC per axis. Sweep points whose pupil displacement is under 0.5 px,
/// or whose features are not detected, are left out of the mean.
inline GainModel estimate_gains(const SceneConfig& cfg, const GainSweep& sweep, const VogThresholds& thr) {
  auto distinct = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
  };
  if (distinct(sweep.eye_deg) < 3 || distinct(sweep.pose_mm) < 3)
    throw InvalidArgument("gain sweeps need at least 3 points per axis");

  GainModel model;
  model.reference = track_features(render_frame(EyeState{0, 0, sweep.pupil_radius}, {}, cfg), thr);
  if (!model.reference.valid()) throw Error("reference frame has no detectable pupil/reflection");

  for (Axis axis : kAxes) {
    double ratio_e = 0.0, ratio_s = 0.0, scale = 0.0;
    int n_e = 0, n_s = 0;
    for (double deg : sweep.eye_deg) {
      EyeState eye{0, 0, sweep.pupil_radius};
      (axis == Axis::Horizontal ? eye.theta_h : eye.theta_v) = deg;
      const auto f = track_features(render_frame(eye, {}, cfg), thr);
      const auto ref_cr = f.valid() ? matching_reference_glint(f, model.reference) : std::nullopt;
      if (!ref_cr) continue;
      const double d_pc = (f.pc_px - model.reference.pc_px).along(axis);
      const double d_cr = (f.cr_px - *ref_cr).along(axis);
      if (std::abs(d_pc) < 0.5) continue;
      ratio_e += d_cr / d_pc;
      ++n_e;
    }
    for (double mm : sweep.pose_mm) {
      SensorPose pose;
      (axis == Axis::Horizontal ? pose.dx : pose.dy) = mm;
      const auto f = track_features(render_frame(EyeState{0, 0, sweep.pupil_radius}, pose, cfg), thr);
      const auto ref_cr = f.valid() ? matching_reference_glint(f, model.reference) : std::nullopt;
      if (!ref_cr) continue;
      const double d_pc = (f.pc_px - model.reference.pc_px).along(axis);
      const double d_cr = (f.cr_px - *ref_cr).along(axis);
      if (std::abs(d_pc) < 0.5) continue;
      ratio_s += d_cr / d_pc;
      scale += d_pc / mm;
      ++n_s;
    }
    if (n_e == 0 || n_s == 0)
      throw Error(std::string("gain sweep is degenerate on the ") + axis_name(axis) + " axis");
    model.g_e[axis] = ratio_e / n_e;
    model.g_s[axis] = ratio_s / n_s;
    model.px_per_mm[axis] = scale / n_s;
  }
  model.validate();
  return model;
}

inline constexpr const char* kVogCsvHeader = "t,pc_x,pc_y,cr_x,cr_y,shift_h_mm,shift_v_mm,valid";

inline void write_csv_row(std::ostream& out, const TrackedFeatures& f, const ShiftEstimate& s) {
  out << f.t << ',' << f.pc_px.x << ',' << f.pc_px.y << ',' << f.cr_px.x << ',' << f.cr_px.y << ',' << s.x_h << ','
      << s.x_v << ',' << ((f.valid() && !s.stale) ? 1 : 0) << '\n';
}

}  // namespace psv
