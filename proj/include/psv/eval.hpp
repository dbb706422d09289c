#pragma once

// Scenarios, fixation metrics and the experiment harness.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <thread>
#include <string>
#include <vector>

#include "psv/calib.hpp"
#include "psv/common.hpp"
#include "psv/fusion.hpp"
#include "psv/psog.hpp"
#include "psv/scan.hpp"
#include "psv/scene.hpp"
#include "psv/vog.hpp"

namespace psv {

// ---------------------------------------------------------------- scenarios

/// Stimulus phase a sample belongs to.
enum class Phase { Rest, Horizontal, Vertical, Free, Saccade };

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Rest: return "rest";
    case Phase::Horizontal: return "H";
    case Phase::Vertical: return "V";
    case Phase::Free: return "free";
    case Phase::Saccade: return "saccade";
  }
  return "?";
}

/// Constant sensor displacement over [start, start + duration).
struct ShiftEvent {
  double start = 0.0;     // s
  double duration = 0.0;  // s
  SensorPose pose;

  bool contains(double t) const { return t >= start && t < start + duration; }
};

struct Scenario {
  std::string label;
  double rate = 1000.0;  // Hz, sample rate of eye_track
  std::vector<EyeState> eye_track;
  std::vector<Phase> phase;  // one per eye_track sample
  std::vector<ShiftEvent> shift_events;

  std::size_t size() const { return eye_track.size(); }
  double duration() const { return static_cast<double>(eye_track.size()) / rate; }
  double time(std::size_t i) const { return static_cast<double>(i) / rate; }

  /// Pose at time t; a later event overrides an earlier overlapping one.
  SensorPose pose_at(double t) const {
    SensorPose pose;
    for (const auto& e : shift_events)
      if (e.contains(t)) pose = e.pose;
    return pose;
  }

  /// Sample-and-hold lookup of the eye track.
  const EyeState& eye_at(double t) const {
    if (eye_track.empty()) throw InvalidArgument("scenario has no samples");
    const double u = std::floor(t * rate + 1e-9);
    const auto i = static_cast<std::size_t>(std::clamp(u, 0.0, static_cast<double>(eye_track.size() - 1)));
    return eye_track[i];
  }

  void validate(double max_shift_mm = 1.75) const {
    if (!(rate > 0)) throw InvalidArgument("scenario rate must be positive");
    if (eye_track.empty()) throw InvalidArgument("scenario has no samples");
    if (phase.size() != eye_track.size()) throw InvalidArgument("scenario phase track length mismatch");
    for (const auto& e : shift_events) {
      if (!(e.duration > 0)) throw InvalidArgument("shift event duration must be positive");
      if (std::abs(e.pose.dx) > max_shift_mm + 1e-12 || std::abs(e.pose.dy) > max_shift_mm + 1e-12)
        throw InvalidArgument("shift event exceeds the configured magnitude bound");
    }
  }
};

/// Main-sequence style saccade duration.
inline double saccade_duration(double amplitude_deg) { return 0.021 + 0.0022 * std::abs(amplitude_deg); }

/// Normalized minimum-jerk position profile, s in [0, 1].
inline double minimum_jerk(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
}

namespace detail {

/// Appends a fixation at `target` lasting `dwell` seconds. With `saccade`, the
/// first part of the interval is a minimum-jerk transition from the previous
/// sample.
inline void append_fixation(Scenario& sc, EyeState target, Phase phase, double dwell, bool saccade) {
  const std::size_t start = sc.eye_track.size();
  const auto n = static_cast<std::size_t>(std::llround(dwell * sc.rate));
  std::size_t n_sacc = 0;
  EyeState from = sc.eye_track.empty() ? target : sc.eye_track.back();
  if (saccade && start > 0) {
    const double amp = std::hypot(target.theta_h - from.theta_h, target.theta_v - from.theta_v);
    if (amp > 0) n_sacc = std::min(n, static_cast<std::size_t>(std::ceil(saccade_duration(amp) * sc.rate)));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_sacc) {
      const double s = minimum_jerk(static_cast<double>(i + 1) / static_cast<double>(n_sacc));
      EyeState e = target;
      e.theta_h = from.theta_h + s * (target.theta_h - from.theta_h);
      e.theta_v = from.theta_v + s * (target.theta_v - from.theta_v);
      // The last transition sample lands on the target and opens the plateau.
      sc.eye_track.push_back(i + 1 == n_sacc ? target : e);
      sc.phase.push_back(i + 1 == n_sacc ? phase : Phase::Saccade);
    } else {
      sc.eye_track.push_back(target);
      sc.phase.push_back(phase);
    }
  }
}

}  // namespace detail

struct HvSpec {
  std::vector<double> amplitudes{2.5, 5.0, 7.5, 10.0};  // deg
  double dwell = 1.0;                                   // s per fixation
  double lead_rest = 1.0;                               // s at center before the H phase
  double gap_rest = 1.0;                                // s at center between phases
  double tail_rest = 2.0;                               // s at center after the V phase
  double rate = 1000.0;
  bool saccades = false;
  double pupil_radius = 1.5;
  double max_amplitude = 10.0;  // calibratable range

  void validate() const {
    if (amplitudes.empty()) throw InvalidArgument("HV scenario needs at least one amplitude");
    for (double a : amplitudes)
      if (!(std::abs(a) <= max_amplitude)) throw InvalidArgument("HV amplitude outside the calibratable range");
    if (!(dwell > 0 && lead_rest >= 0 && gap_rest >= 0 && tail_rest >= 0 && rate > 0))
      throw InvalidArgument("HV timing must be positive");
  }

  /// Start of the four jumps of amplitude index `k` in the given phase.
  double block_start(Axis axis, std::size_t k) const {
    const double h0 = lead_rest;
    const double v0 = lead_rest + 4.0 * dwell * static_cast<double>(amplitudes.size()) + gap_rest;
    return (axis == Axis::Horizontal ? h0 : v0) + 4.0 * dwell * static_cast<double>(k);
  }
};

/// Jumping-point stimulus: for each amplitude A the target visits +A, -A, +A,
/// -A on the horizontal axis, then the same on the vertical axis, with rest
/// periods at the center around both phases.
inline Scenario gen_hv_scenario(const HvSpec& spec = {}) {
  spec.validate();
  Scenario sc;
  sc.label = "hv";
  sc.rate = spec.rate;
  const EyeState center{0, 0, spec.pupil_radius};
  detail::append_fixation(sc, center, Phase::Rest, spec.lead_rest, false);
  for (Axis axis : kAxes) {
    if (axis == Axis::Vertical) detail::append_fixation(sc, center, Phase::Rest, spec.gap_rest, spec.saccades);
    const Phase phase = axis == Axis::Horizontal ? Phase::Horizontal : Phase::Vertical;
    for (double a : spec.amplitudes)
      for (double sign : {1.0, -1.0, 1.0, -1.0}) {
        EyeState e = center;
        (axis == Axis::Horizontal ? e.theta_h : e.theta_v) = sign * a;
        detail::append_fixation(sc, e, phase, spec.dwell, spec.saccades);
      }
  }
  detail::append_fixation(sc, center, Phase::Rest, spec.tail_rest, spec.saccades);
  return sc;
}

/// Shift event placed over the jumps of one amplitude block. Larger |shift|
/// maps to a larger amplitude: |shift| / max_shift is scaled onto the rank of
/// the block amplitudes.
inline ShiftEvent hv_shift_event(const HvSpec& spec, Axis eye_axis, Axis shift_axis, double shift_mm,
                                 double max_shift_mm = 1.75, double duration = 4.0) {
  spec.validate();
  std::vector<std::size_t> order(spec.amplitudes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(spec.amplitudes[a]) < std::abs(spec.amplitudes[b]);
  });
  const double frac = std::clamp(std::abs(shift_mm) / max_shift_mm, 0.0, 1.0);
  const auto rank = static_cast<std::size_t>(std::llround(frac * static_cast<double>(order.size() - 1)));
  ShiftEvent ev;
  ev.start = spec.block_start(eye_axis, order[rank]);
  ev.duration = duration;
  (shift_axis == Axis::Horizontal ? ev.pose.dx : ev.pose.dy) = shift_mm;
  return ev;
}

struct ReadingSpec {
  int lines = 5;
  double duration = 10.0;  // s
  std::uint64_t seed = 1;
  double rate = 1000.0;
  bool saccades = false;
  double pupil_radius = 1.5;
};

/// Synthetic reading: left-to-right fixation staircases with return sweeps and
/// downward line steps, kept within +/-10 deg H and +/-5 deg V.
inline Scenario gen_reading_scenario(const ReadingSpec& spec) {
  if (!(spec.duration > 0)) throw InvalidArgument("reading duration must be positive");
  if (spec.lines < 1) throw InvalidArgument("reading scenario needs at least one line");
  if (!(spec.rate > 0)) throw InvalidArgument("reading rate must be positive");
  std::mt19937_64 rng(spec.seed);
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  constexpr double kLeft = -8.0, kRight = 9.0, kTop = -4.0, kBottom = 5.0;
  Scenario sc;
  sc.label = "tx";
  sc.rate = spec.rate;
  const auto total = static_cast<std::size_t>(std::llround(spec.duration * spec.rate));
  int line = 0;
  double h = kLeft + uniform(-0.5, 0.5);
  double v = kTop;
  while (sc.size() < total) {
    const double dwell = std::min(uniform(0.18, 0.32), static_cast<double>(total - sc.size()) / spec.rate);
    detail::append_fixation(sc, EyeState{h, v, spec.pupil_radius}, Phase::Free, dwell, spec.saccades);
    h += uniform(2.0, 4.0);
    if (h > kRight) {
      h = kLeft + uniform(-0.5, 0.5);
      v += uniform(1.0, 2.0);
      if (++line >= spec.lines || v > kBottom) {
        line = 0;
        v = kTop;
      }
    }
  }
  sc.eye_track.resize(total);
  sc.phase.resize(total);
  return sc;
}

/// Window of `duration` (on a 0.1 s grid) with the largest mean |eye angle| on
/// `axis`; the reading-scenario analogue of placing shifts over the largest
/// eye movements.
inline ShiftEvent strongest_window_event(const Scenario& sc, Axis shift_axis, double shift_mm, double duration = 2.5,
                                         std::optional<Axis> eye_axis = std::nullopt) {
  const Axis ax = eye_axis.value_or(shift_axis);
  const auto win = static_cast<std::size_t>(std::llround(duration * sc.rate));
  if (win == 0 || win > sc.size()) throw InvalidArgument("shift event does not fit in the scenario");
  const auto stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * sc.rate)));
  std::vector<double> prefix(sc.size() + 1, 0.0);
  for (std::size_t i = 0; i < sc.size(); ++i) {
    const auto& e = sc.eye_track[i];
    prefix[i + 1] = prefix[i] + std::abs(ax == Axis::Horizontal ? e.theta_h : e.theta_v);
  }
  std::size_t best = 0;
  double best_sum = -1.0;
  for (std::size_t s = 0; s + win <= sc.size(); s += stride) {
    const double sum = prefix[s + win] - prefix[s];
    if (sum > best_sum + 1e-12) {
      best_sum = sum;
      best = s;
    }
  }
  ShiftEvent ev;
  ev.start = sc.time(best);
  ev.duration = duration;
  (shift_axis == Axis::Horizontal ? ev.pose.dx : ev.pose.dy) = shift_mm;
  return ev;
}

/// Gaze recording in CSV with columns t,theta_h,theta_v and optionally dx,dy.
/// Rows must be uniformly spaced at 1/rate; runs of a constant nonzero pose
/// become shift events.
inline Scenario load_gaze_csv(std::istream& in, double rate, const std::string& label = "csv",
                              double pupil_radius = 1.5) {
  Scenario sc;
  sc.label = label;
  sc.rate = rate;
  std::vector<SensorPose> poses;
  std::string line;
  std::size_t lineno = 0;
  bool have_pose = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (std::isalpha(static_cast<unsigned char>(line[0]))) continue;  // header
    std::stringstream ss(line);
    std::vector<double> v;
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error("gaze CSV line " + std::to_string(lineno) + ": not a number: " + cell);
      }
    }
    if (v.size() != 3 && v.size() != 5)
      throw Error("gaze CSV line " + std::to_string(lineno) + ": expected 3 or 5 columns");
    const double expected = sc.time(sc.size());
    if (std::abs(v[0] - expected) > 0.25 / rate)
      throw Error("gaze CSV line " + std::to_string(lineno) + ": samples must be spaced 1/rate apart from t=0");
    EyeState e{v[1], v[2], pupil_radius};
    e.validate();
    sc.eye_track.push_back(e);
    sc.phase.push_back(Phase::Free);
    have_pose = have_pose || v.size() == 5;
    poses.push_back(v.size() == 5 ? SensorPose{v[3], v[4]} : SensorPose{});
  }
  if (sc.eye_track.empty()) throw Error("gaze CSV has no samples");
  if (have_pose) {
    std::size_t i = 0;
    while (i < poses.size()) {
      std::size_t j = i;
      while (j < poses.size() && poses[j].dx == poses[i].dx && poses[j].dy == poses[i].dy) ++j;
      if (poses[i].dx != 0.0 || poses[i].dy != 0.0)
        sc.shift_events.push_back({sc.time(i), static_cast<double>(j - i) / rate, poses[i]});
      i = j;
    }
  }
  return sc;
}

// ------------------------------------------------------------ segmentation

struct FixationSegment {
  std::size_t start_idx = 0;  // first sample
  std::size_t end_idx = 0;    // one past the last sample
  Phase phase = Phase::Free;

  std::size_t size() const { return end_idx > start_idx ? end_idx - start_idx : 0; }
  bool empty() const { return size() == 0; }
};

struct Segmentation {
  std::vector<FixationSegment> segments;
  std::size_t dropped = 0;  // plateaus shorter than twice the trim
};

/// One segment per plateau of constant ground truth, trimmed by `trim_s` at
/// both ends. Saccade samples never belong to a plateau.
inline Segmentation segment_fixations(const Scenario& sc, double trim_s = 0.1) {
  if (!(trim_s >= 0)) throw InvalidArgument("trim must be non-negative");
  const auto trim = static_cast<std::size_t>(std::llround(trim_s * sc.rate));
  Segmentation out;
  std::size_t i = 0;
  const std::size_t n = sc.size();
  while (i < n) {
    if (sc.phase[i] == Phase::Saccade) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < n && sc.phase[j] != Phase::Saccade && sc.eye_track[j].theta_h == sc.eye_track[i].theta_h &&
           sc.eye_track[j].theta_v == sc.eye_track[i].theta_v)
      ++j;
    if (j - i <= 2 * trim)
      ++out.dropped;
    else
      out.segments.push_back({i + trim, j - trim, sc.phase[i]});
    i = j;
  }
  return out;
}

// ----------------------------------------------------------------- metrics

/// Mean absolute error over the segment. Non-finite outputs are skipped.
inline std::optional<double> fixation_accuracy(std::span<const double> output, std::span<const double> truth,
                                               const FixationSegment& seg) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = seg.start_idx; i < seg.end_idx && i < output.size(); ++i) {
    if (!std::isfinite(output[i])) continue;
    sum += std::abs(output[i] - truth[i]);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

/// Per-fixation accuracy; empty segments are excluded.
inline std::vector<double> accuracy(std::span<const double> output, std::span<const double> truth,
                                    const std::vector<FixationSegment>& segments) {
  if (output.size() != truth.size()) throw InvalidArgument("output and truth streams must be aligned");
  std::vector<double> out;
  for (const auto& seg : segments)
    if (auto a = fixation_accuracy(output, truth, seg)) out.push_back(*a);
  return out;
}

/// Off-axis bias relative to the on-axis excursion, in percent. nullopt when
/// the on-axis truth mean is under `min_on_axis_deg`.
inline std::optional<double> fixation_crosstalk(std::span<const double> output_off, std::span<const double> truth_off,
                                                std::span<const double> truth_on, const FixationSegment& seg,
                                                double min_on_axis_deg = 0.5) {
  double out_sum = 0.0, truth_sum = 0.0, on_sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = seg.start_idx; i < seg.end_idx && i < output_off.size(); ++i) {
    if (!std::isfinite(output_off[i])) continue;
    out_sum += output_off[i];
    truth_sum += truth_off[i];
    on_sum += truth_on[i];
    ++n;
  }
  if (n == 0) return std::nullopt;
  const double on = std::abs(on_sum / static_cast<double>(n));
  if (on < min_on_axis_deg) return std::nullopt;
  return std::abs(out_sum - truth_sum) / static_cast<double>(n) / on * 100.0;
}

inline std::vector<double> crosstalk(std::span<const double> output_off, std::span<const double> truth_off,
                                     std::span<const double> truth_on, const std::vector<FixationSegment>& segments,
                                     double min_on_axis_deg = 0.5) {
  std::vector<double> out;
  for (const auto& seg : segments)
    if (auto c = fixation_crosstalk(output_off, truth_off, truth_on, seg, min_on_axis_deg)) out.push_back(*c);
  return out;
}

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation; 0 below two values
  std::size_t n = 0;
};

inline Summary summarize(std::span<const double> values) {
  Summary s;
  s.n = values.size();
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

struct FixationMetrics {
  FixationSegment segment;
  EyeState truth;
  double acc_h = 0.0;  // deg
  double acc_v = 0.0;  // deg
  /// Off-axis channel error in percent for single-axis phases.
  std::optional<double> crosstalk;
  bool during_shift = false;  // segment midpoint inside a shift event
};

struct ShiftError {
  double t = 0.0;
  SensorPose truth;
  ShiftEstimate estimate;

  double error(Axis axis) const { return estimate.along(axis) - truth.along(axis); }
};

struct MetricsReport {
  std::vector<FixationMetrics> fixations;
  std::size_t dropped_segments = 0;
  Summary acc_h, acc_v;
  Summary cross_hv;  // horizontal channel during vertical movements
  Summary cross_vh;  // vertical channel during horizontal movements
  std::vector<ShiftError> shift_errors;
  Summary shift_err_h, shift_err_v;  // absolute, mm

  /// Accuracy summary over a subset of fixations.
  template <class Pred>
  Summary accuracy_where(Axis axis, Pred&& keep) const {
    std::vector<double> v;
    for (const auto& f : fixations)
      if (keep(f)) v.push_back(axis == Axis::Horizontal ? f.acc_h : f.acc_v);
    return summarize(v);
  }

  Summary accuracy_during_shift(Axis axis) const {
    return accuracy_where(axis, [](const FixationMetrics& f) { return f.during_shift; });
  }
};

inline MetricsReport compute_metrics(const Scenario& sc, const std::vector<GazeSample>& output,
                                     const std::vector<ShiftError>& shift_errors, double trim_s = 0.1) {
  if (output.size() != sc.size()) throw InvalidArgument("output stream length differs from the scenario");
  std::vector<double> out_h(sc.size()), out_v(sc.size()), truth_h(sc.size()), truth_v(sc.size());
  for (std::size_t i = 0; i < sc.size(); ++i) {
    out_h[i] = output[i].gaze_h;
    out_v[i] = output[i].gaze_v;
    truth_h[i] = sc.eye_track[i].theta_h;
    truth_v[i] = sc.eye_track[i].theta_v;
  }
  const Segmentation seg = segment_fixations(sc, trim_s);
  MetricsReport rep;
  rep.dropped_segments = seg.dropped;
  std::vector<double> all_h, all_v, hv, vh;
  for (const auto& s : seg.segments) {
    const auto ah = fixation_accuracy(out_h, truth_h, s);
    const auto av = fixation_accuracy(out_v, truth_v, s);
    if (!ah || !av) continue;
    FixationMetrics f;
    f.segment = s;
    f.truth = sc.eye_track[s.start_idx];
    f.acc_h = *ah;
    f.acc_v = *av;
    if (s.phase == Phase::Vertical) {
      f.crosstalk = fixation_crosstalk(out_h, truth_h, truth_v, s);
      if (f.crosstalk) hv.push_back(*f.crosstalk);
    } else if (s.phase == Phase::Horizontal) {
      f.crosstalk = fixation_crosstalk(out_v, truth_v, truth_h, s);
      if (f.crosstalk) vh.push_back(*f.crosstalk);
    }
    const double mid = 0.5 * (sc.time(s.start_idx) + sc.time(s.end_idx));
    f.during_shift = std::any_of(sc.shift_events.begin(), sc.shift_events.end(),
                                 [mid](const ShiftEvent& e) { return e.contains(mid); });
    all_h.push_back(f.acc_h);
    all_v.push_back(f.acc_v);
    rep.fixations.push_back(f);
  }
  rep.acc_h = summarize(all_h);
  rep.acc_v = summarize(all_v);
  rep.cross_hv = summarize(hv);
  rep.cross_vh = summarize(vh);
  rep.shift_errors = shift_errors;
  std::vector<double> eh, ev;
  for (const auto& e : shift_errors) {
    eh.push_back(std::abs(e.error(Axis::Horizontal)));
    ev.push_back(std::abs(e.error(Axis::Vertical)));
  }
  rep.shift_err_h = summarize(eh);
  rep.shift_err_v = summarize(ev);
  return rep;
}

// -------------------------------------------------------------- pipeline

struct CalibGridSpec {
  std::vector<double> eye_deg{-10.0, 0.0, 10.0};
  std::vector<double> sensor_mm{-2.0, 0.0, 2.0};
};

struct PipelineConfig {
  SceneConfig psog_scene{};
  SceneConfig vog_scene = SceneConfig::vog_default();
  PhotosensorLayout layout{};
  VogThresholds thresholds{};
  StreamConfig stream{};
  CalibGridSpec calib_grid{};
  GainSweep gain_sweep{};
  double max_shift_mm = 5.0;  // VOG estimates beyond this are marked unreliable
  double trim_s = 0.1;
  double pupil_radius = 1.5;

  void validate() const {
    psog_scene.validate();
    vog_scene.validate();
    layout.validate();
    stream.validate();
    if (!(trim_s >= 0)) throw InvalidArgument("trim must be non-negative");
  }
};

/// Calibration measurements taken from a PSOG source on the configured grid.
/// The H axis sweeps theta_h and dx with theta_v = dy = 0; V likewise.
inline CalibGrid measure_calib_grid(const PsogSource& source, const CalibGridSpec& spec, double pupil_radius = 1.5) {
  CalibGrid grid;
  for (Axis axis : kAxes) {
    AxisGrid& g = grid[axis];
    g.eye_positions = spec.eye_deg;
    g.sensor_positions = spec.sensor_mm;
    for (double s : spec.sensor_mm) {
      std::vector<double> row;
      for (double e : spec.eye_deg) {
        EyeState eye{0, 0, pupil_radius};
        SensorPose pose;
        (axis == Axis::Horizontal ? eye.theta_h : eye.theta_v) = e;
        (axis == Axis::Horizontal ? pose.dx : pose.dy) = s;
        row.push_back(source.sample(eye, pose).along(axis));
      }
      g.raw.push_back(std::move(row));
    }
  }
  return grid;
}

struct ClusterEstimate {
  Axis axis = Axis::Horizontal;
  double eye_deg = 0.0;
  double true_mm = 0.0;
  double estimated_mm = 0.0;
};

struct SensorClusterEstimates {
  PerAxis<std::vector<double>> mean;  // per calibration sensor position
  std::vector<ClusterEstimate> frames;
};

/// VOG estimate of every calibration sensor position: the mean of the
/// estimates over the frames recorded at that position (one per grid eye
/// position).
inline SensorClusterEstimates estimate_sensor_clusters(const PipelineConfig& cfg, const GainModel& gains) {
  SensorClusterEstimates out;
  for (Axis axis : kAxes) {
    for (double s : cfg.calib_grid.sensor_mm) {
      double sum = 0.0;
      std::size_t n = 0;
      for (double e : cfg.calib_grid.eye_deg) {
        EyeState eye{0, 0, cfg.pupil_radius};
        SensorPose pose;
        (axis == Axis::Horizontal ? eye.theta_h : eye.theta_v) = e;
        (axis == Axis::Horizontal ? pose.dx : pose.dy) = s;
        const auto f = track_features(render_frame(eye, pose, cfg.vog_scene), cfg.thresholds);
        if (!f.valid() || !matching_reference_glint(f, gains.reference)) continue;
        const double est = estimate_sensor_shift(f, gains, cfg.max_shift_mm).along(axis);
        out.frames.push_back({axis, e, s, est});
        sum += est;
        ++n;
      }
      if (n == 0)
        throw CalibrationError(std::string("no VOG frame tracked at ") + axis_name(axis) + " sensor position " +
                               std::to_string(s) + " mm");
      out.mean[axis].push_back(sum / static_cast<double>(n));
    }
  }
  return out;
}

enum class Mode { Traditional, Corrected };

inline const char* mode_name(Mode m) { return m == Mode::Traditional ? "traditional" : "corrected"; }

/// Raw sensor streams of one scenario; shared by paired runs.
struct Streams {
  std::vector<PsogSample> psog;
  std::vector<TrackedFeatures> features;  // one per VOG frame
  std::vector<ShiftEstimate> shifts;      // one per VOG frame
  std::vector<SensorPose> vog_truth;      // pose at each VOG frame
};

/// Samples the PSOG source at every scenario sample and renders/tracks one
/// VOG frame per 1/f_vog. Frames whose eye and pose match `reuse` (a run of
/// the same eye track) are taken from it instead of rendered again.
inline Streams simulate_streams(const Scenario& sc, const PipelineConfig& cfg, const PsogSource& source,
                                const GainModel& gains, const Streams* reuse = nullptr) {
  cfg.validate();
  sc.validate(cfg.max_shift_mm);
  Streams st;
  st.psog.reserve(sc.size());
  for (std::size_t i = 0; i < sc.size(); ++i) {
    const double t = sc.time(i);
    st.psog.push_back(source.sample(sc.eye_track[i], sc.pose_at(t), t));
  }
  const std::size_t ratio = cfg.stream.ratio();
  const std::size_t frames = (sc.size() + ratio - 1) / ratio;
  ShiftEstimator estimator(gains, cfg.max_shift_mm);
  for (std::size_t k = 0; k < frames; ++k) {
    const double t = sc.time(k * ratio);
    const SensorPose pose = sc.pose_at(t);
    TrackedFeatures f;
    if (reuse && k < reuse->features.size() && reuse->vog_truth[k].dx == pose.dx && reuse->vog_truth[k].dy == pose.dy)
      f = reuse->features[k];
    else
      f = track_features(render_frame(sc.eye_track[k * ratio], pose, cfg.vog_scene), cfg.thresholds, t);
    st.features.push_back(f);
    st.shifts.push_back(estimator.update(f));
    st.vog_truth.push_back(pose);
  }
  return st;
}

struct ExperimentResult {
  Mode mode = Mode::Corrected;
  std::vector<GazeSample> output;
  MetricsReport report;
};

/// Fusion and metrics over precomputed streams. Traditional mode gates every
/// shift to zero.
inline ExperimentResult evaluate(const Scenario& sc, const Streams& st, const CalibModel& model,
                                 const PipelineConfig& cfg, Mode mode) {
  StreamConfig stream = cfg.stream;
  if (mode == Mode::Traditional) stream.shift_gate_mm = std::numeric_limits<double>::infinity();
  ExperimentResult r;
  r.mode = mode;
  r.output = correct(st.psog, st.shifts, model, stream);
  std::vector<ShiftError> errors;
  for (std::size_t k = 0; k < st.shifts.size(); ++k)
    if (!st.shifts[k].stale) errors.push_back({st.shifts[k].t, st.vog_truth[k], st.shifts[k]});
  r.report = compute_metrics(sc, r.output, errors, cfg.trim_s);
  return r;
}

inline ExperimentResult run_experiment(const Scenario& sc, const PipelineConfig& cfg, const PsogSource& source,
                                       const CalibModel& model, const GainModel& gains, Mode mode) {
  return evaluate(sc, simulate_streams(sc, cfg, source, gains), model, cfg, mode);
}

struct PairedResult {
  Streams streams;
  ExperimentResult traditional;
  ExperimentResult corrected;
};

/// Both modes over one set of streams.
inline PairedResult run_paired(const Scenario& sc, const PipelineConfig& cfg, const PsogSource& source,
                               const CalibModel& model, const GainModel& gains, const Streams* reuse = nullptr) {
  PairedResult p;
  p.streams = simulate_streams(sc, cfg, source, gains, reuse);
  p.traditional = evaluate(sc, p.streams, model, cfg, Mode::Traditional);
  p.corrected = evaluate(sc, p.streams, model, cfg, Mode::Corrected);
  return p;
}

/// Everything a run needs besides the scenario.
struct Calibrated {
  CalibModel model;
  GainModel gains;
  CalibGrid grid;
  FitDiagnostics diagnostics;
};

inline Calibrated calibrate(const PipelineConfig& cfg, const PsogSource& source) {
  cfg.validate();
  Calibrated c;
  c.grid = measure_calib_grid(source, cfg.calib_grid, cfg.pupil_radius);
  c.model = fit(c.grid, &c.diagnostics);
  GainSweep sweep = cfg.gain_sweep;
  sweep.pupil_radius = cfg.pupil_radius;
  c.gains = estimate_gains(cfg.vog_scene, sweep, cfg.thresholds);
  return c;
}

// ------------------------------------------------------------- shift grid

struct ShiftGridPoint {
  Axis shift_axis = Axis::Horizontal;
  Axis eye_axis = Axis::Horizontal;  // stimulus phase the shift overlaps
  double shift_mm = 0.0;
  PerAxis<Summary> traditional;  // accuracy over fixations during the shift
  PerAxis<Summary> corrected;
  PerAxis<Summary> shift_error;  // |estimate - truth| over VOG frames inside the event
};

/// HV runs with one shift event per grid value, on each sensor axis, placed
/// over eye movements on the same axis and, with `orthogonal`, on the other
/// axis as well. Grid points run on up to `jobs` threads.
inline std::vector<ShiftGridPoint> run_shift_grid(const HvSpec& hv, const std::vector<double>& grid,
                                                  const PipelineConfig& cfg, const PsogSource& source,
                                                  const Calibrated& cal, bool orthogonal = false,
                                                  double max_shift_mm = 1.75, double event_duration = 4.0,
                                                  unsigned jobs = 1) {
  const Scenario base = gen_hv_scenario(hv);
  const Streams baseline = simulate_streams(base, cfg, source, cal.gains);
  std::vector<ShiftGridPoint> out;
  for (Axis shift_axis : kAxes)
    for (Axis eye_axis : kAxes) {
      if (!orthogonal && eye_axis != shift_axis) continue;
      for (double mm : grid) {
        ShiftGridPoint pt;
        pt.shift_axis = shift_axis;
        pt.eye_axis = eye_axis;
        pt.shift_mm = mm;
        out.push_back(pt);
      }
    }
  auto run_point = [&](ShiftGridPoint& pt) {
    Scenario sc = base;
    const ShiftEvent ev = hv_shift_event(hv, pt.eye_axis, pt.shift_axis, pt.shift_mm, max_shift_mm, event_duration);
    sc.shift_events = {ev};
    const PairedResult p = run_paired(sc, cfg, source, cal.model, cal.gains, &baseline);
    for (Axis a : kAxes) {
      pt.traditional[a] = p.traditional.report.accuracy_during_shift(a);
      pt.corrected[a] = p.corrected.report.accuracy_during_shift(a);
      std::vector<double> err;
      for (const auto& e : p.corrected.report.shift_errors)
        if (ev.contains(e.t)) err.push_back(std::abs(e.error(a)));
      pt.shift_error[a] = summarize(err);
    }
  };
  jobs = std::max(1u, jobs);
  if (jobs == 1) {
    for (auto& pt : out) run_point(pt);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> workers;
  for (unsigned w = 0; w < jobs; ++w)
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < out.size(); i = next++) run_point(out[i]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : workers) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ----------------------------------------------------------------- output

inline constexpr const char* kFixationCsvHeader =
    "index,phase,start_s,end_s,truth_h_deg,truth_v_deg,acc_h_deg,acc_v_deg,crosstalk_pct,during_shift";

inline void write_fixations_csv(std::ostream& out, const Scenario& sc, const MetricsReport& rep) {
  out << kFixationCsvHeader << '\n';
  for (std::size_t i = 0; i < rep.fixations.size(); ++i) {
    const auto& f = rep.fixations[i];
    out << i << ',' << phase_name(f.segment.phase) << ',' << sc.time(f.segment.start_idx) << ','
        << sc.time(f.segment.end_idx) << ',' << f.truth.theta_h << ',' << f.truth.theta_v << ',' << f.acc_h << ','
        << f.acc_v << ',';
    if (f.crosstalk) out << *f.crosstalk;
    out << ',' << (f.during_shift ? 1 : 0) << '\n';
  }
}

inline void write_summary(std::ostream& out, const MetricsReport& rep, const std::string& section) {
  auto line = [&](const char* key, const Summary& s) {
    out << key << "_mean = " << s.mean << '\n' << key << "_sd = " << s.sd << '\n' << key << "_n = " << s.n << '\n';
  };
  out << '[' << section << "]\n";
  line("accuracy_h_deg", rep.acc_h);
  line("accuracy_v_deg", rep.acc_v);
  line("crosstalk_hv_pct", rep.cross_hv);
  line("crosstalk_vh_pct", rep.cross_vh);
  line("shift_error_h_mm", rep.shift_err_h);
  line("shift_error_v_mm", rep.shift_err_v);
  out << "dropped_segments = " << rep.dropped_segments << "\n\n";
}

inline constexpr const char* kTruthCsvHeader = "t,theta_h_deg,theta_v_deg,dx_mm,dy_mm";

inline void write_truth_csv(std::ostream& out, const Scenario& sc) {
  out << kTruthCsvHeader << '\n';
  for (std::size_t i = 0; i < sc.size(); ++i) {
    const SensorPose p = sc.pose_at(sc.time(i));
    out << sc.time(i) << ',' << sc.eye_track[i].theta_h << ',' << sc.eye_track[i].theta_v << ',' << p.dx << ','
        << p.dy << '\n';
  }
}

inline constexpr const char* kShiftGridCsvHeader =
    "shift_axis,eye_axis,shift_mm,trad_acc_h_deg,trad_acc_v_deg,corr_acc_h_deg,corr_acc_v_deg,shift_err_h_mm,"
    "shift_err_v_mm";

inline void write_shift_grid_csv(std::ostream& out, const std::vector<ShiftGridPoint>& pts) {
  out << kShiftGridCsvHeader << '\n';
  for (const auto& p : pts)
    out << axis_name(p.shift_axis) << ',' << axis_name(p.eye_axis) << ',' << p.shift_mm << ','
        << p.traditional.h.mean << ',' << p.traditional.v.mean << ',' << p.corrected.h.mean << ','
        << p.corrected.v.mean << ',' << p.shift_error.h.mean << ',' << p.shift_error.v.mean << '\n';
}

}  // namespace psv
