#pragma once

// Composite quadratic calibration.
//
// Per axis, the raw PSOG output is modeled as a quadratic in eye position
// whose three coefficients are themselves quadratics in sensor position:
//
//   f(e, s) = a(s) e^2 + b(s) e + c(s)
//   a(s) = a1 s^2 + a2 s + a3   (likewise b, c)
//
// Fitting is two-stage least squares: one quadratic over eye positions per
// sensor position, then one quadratic per coefficient over sensor positions.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "psv/common.hpp"

namespace psv {

/// Quadratic p0 x^2 + p1 x + p2.
struct Quadratic {
  std::array<double, 3> c{};

  double operator()(double x) const { return (c[0] * x + c[1]) * x + c[2]; }
  double derivative(double x) const { return 2.0 * c[0] * x + c[1]; }
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double x, double tol = 0.0) const { return x >= lo - tol && x <= hi + tol; }
  double clamp(double x) const { return std::clamp(x, lo, hi); }
};

/// Calibration of one axis: the low-level quadratics a(s), b(s), c(s).
struct AxisCalibration {
  Quadratic a, b, c;
  Interval eye_domain;     // deg
  Interval sensor_domain;  // mm

  /// Top-level quadratic in eye position at sensor position `s`.
  Quadratic at_sensor(double s) const { return {{a(s), b(s), c(s)}}; }

  /// a1..a3, b1..b3, c1..c3.
  std::array<double, 9> coefficients() const {
    return {a.c[0], a.c[1], a.c[2], b.c[0], b.c[1], b.c[2], c.c[0], c.c[1], c.c[2]};
  }
};

struct CalibModel {
  PerAxis<AxisCalibration> axes;

  const AxisCalibration& operator[](Axis axis) const { return axes[axis]; }
  AxisCalibration& operator[](Axis axis) { return axes[axis]; }
};

/// Measurements of one axis: raw[sensor_index][eye_index].
struct AxisGrid {
  std::vector<double> eye_positions;     // deg
  std::vector<double> sensor_positions;  // mm
  std::vector<std::vector<double>> raw;
};

struct CalibGrid {
  PerAxis<AxisGrid> axes;

  AxisGrid& operator[](Axis axis) { return axes[axis]; }
  const AxisGrid& operator[](Axis axis) const { return axes[axis]; }
};

struct FitDiagnostics {
  PerAxis<double> stage1_rms;  // raw units, eye-direction fits
  PerAxis<double> stage2_rms;  // coefficient units, sensor-direction fits
  PerAxis<double> model_rms;   // raw units, full model against the grid
};

namespace detail {

inline std::size_t count_distinct(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

/// Least-squares quadratic through (x, y); residual RMS in `rms`.
inline Quadratic fit_quadratic(const std::vector<double>& x, const std::vector<double>& y, const std::string& what,
                               double* rms = nullptr) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    design(i, 0) = x[i] * x[i];
    design(i, 1) = x[i];
    design(i, 2) = 1.0;
    rhs(i) = y[i];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < 3) throw CalibrationError("rank-deficient design matrix over " + what);
  const Eigen::Vector3d sol = qr.solve(rhs);
  Quadratic q{{sol(0), sol(1), sol(2)}};
  if (rms) {
    double ss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) ss += std::pow(q(x[i]) - y[i], 2);
    *rms = std::sqrt(ss / static_cast<double>(n));
  }
  return q;
}

inline Interval span_of(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {*lo, *hi};
}

}  // namespace detail

/// True when d f / d e keeps one strict sign over the eye domain for every
/// sensor position in the sensor domain, sampled every `step_mm`.
inline bool is_monotone(const AxisCalibration& cal, double step_mm = 0.1) {
  int sign = 0;
  const double lo = cal.sensor_domain.lo, hi = cal.sensor_domain.hi;
  const int steps = std::max(1, static_cast<int>(std::ceil((hi - lo) / step_mm - 1e-9)));
  for (int k = 0; k <= steps; ++k) {
    const double s = std::min(hi, lo + k * step_mm);
    const Quadratic q = cal.at_sensor(s);
    // The derivative is linear in e, so its endpoint signs decide.
    for (double e : {cal.eye_domain.lo, cal.eye_domain.hi}) {
      const double d = q.derivative(e);
      const int sg = d > 0 ? 1 : (d < 0 ? -1 : 0);
      if (sg == 0 || (sign != 0 && sg != sign)) return false;
      sign = sg;
    }
  }
  return true;
}

/// Two-stage least-squares fit of one axis.
inline AxisCalibration fit_axis(const AxisGrid& grid, Axis axis, double* stage1_rms = nullptr,
                                double* stage2_rms = nullptr, bool require_monotone = true) {
  const std::string name = axis_name(axis);
  if (detail::count_distinct(grid.eye_positions) < 3)
    throw CalibrationError("need at least 3 distinct " + name + " eye positions");
  if (detail::count_distinct(grid.sensor_positions) < 3)
    throw CalibrationError("need at least 3 distinct " + name + " sensor positions");
  if (grid.raw.size() != grid.sensor_positions.size())
    throw CalibrationError(name + " grid has one raw row per sensor position");

  std::vector<double> as, bs, cs;
  double ss1 = 0.0;
  for (std::size_t i = 0; i < grid.sensor_positions.size(); ++i) {
    if (grid.raw[i].size() != grid.eye_positions.size())
      throw CalibrationError(name + " grid row has one raw value per eye position");
    double rms = 0.0;
    const Quadratic q = detail::fit_quadratic(grid.eye_positions, grid.raw[i], name + " eye positions", &rms);
    ss1 += rms * rms;
    as.push_back(q.c[0]);
    bs.push_back(q.c[1]);
    cs.push_back(q.c[2]);
  }
  AxisCalibration cal;
  double ra = 0, rb = 0, rc = 0;
  const std::string sensor = name + " sensor positions";
  cal.a = detail::fit_quadratic(grid.sensor_positions, as, sensor, &ra);
  cal.b = detail::fit_quadratic(grid.sensor_positions, bs, sensor, &rb);
  cal.c = detail::fit_quadratic(grid.sensor_positions, cs, sensor, &rc);
  cal.eye_domain = detail::span_of(grid.eye_positions);
  cal.sensor_domain = detail::span_of(grid.sensor_positions);
  if (stage1_rms) *stage1_rms = std::sqrt(ss1 / static_cast<double>(grid.sensor_positions.size()));
  if (stage2_rms) *stage2_rms = std::sqrt((ra * ra + rb * rb + rc * rc) / 3.0);
  if (require_monotone && !is_monotone(cal))
    throw CalibrationError("fitted " + name + " calibration is not monotone over its eye domain");
  return cal;
}

inline double forward(const CalibModel& model, double eye_deg, double sensor_mm, Axis axis) {
  return model[axis].at_sensor(sensor_mm)(eye_deg);
}

struct ForwardResult {
  double raw = 0.0;
  bool extrapolated = false;
};

/// forward() with a flag for points outside the fitted domain.
inline ForwardResult forward_checked(const CalibModel& model, double eye_deg, double sensor_mm, Axis axis) {
  const auto& cal = model[axis];
  return {forward(model, eye_deg, sensor_mm, axis),
          !cal.eye_domain.contains(eye_deg) || !cal.sensor_domain.contains(sensor_mm)};
}

inline FitDiagnostics diagnose(const CalibModel& model, const CalibGrid& grid) {
  FitDiagnostics d;
  for (Axis axis : kAxes) {
    const auto& g = grid[axis];
    double ss = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < g.sensor_positions.size(); ++i)
      for (std::size_t j = 0; j < g.eye_positions.size(); ++j, ++n)
        ss += std::pow(forward(model, g.eye_positions[j], g.sensor_positions[i], axis) - g.raw[i][j], 2);
    d.model_rms[axis] = n ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
  }
  return d;
}

inline CalibModel fit(const CalibGrid& grid, FitDiagnostics* diagnostics = nullptr, bool require_monotone = true) {
  CalibModel model;
  FitDiagnostics d;
  for (Axis axis : kAxes)
    model[axis] = fit_axis(grid[axis], axis, &d.stage1_rms[axis], &d.stage2_rms[axis], require_monotone);
  if (diagnostics) {
    const auto full = diagnose(model, grid);
    d.model_rms = full.model_rms;
    *diagnostics = d;
  }
  return model;
}

/// Result of fitting with VOG-estimated sensor positions.
struct AutoCalibration {
  CalibModel model;
  /// Estimated minus true coefficient, per axis, a1..c3; present when a
  /// ground-truth model was supplied.
  std::optional<PerAxis<std::array<double, 9>>> coefficient_deltas;
};

/// Fits with each sensor position replaced by its VOG estimate.
/// `estimated_sensor[axis][i]` replaces `grid[axis].sensor_positions[i]`.
inline AutoCalibration fit_auto(const CalibGrid& grid, const PerAxis<std::vector<double>>& estimated_sensor,
                                const CalibModel* ground_truth = nullptr) {
  CalibGrid substituted = grid;
  for (Axis axis : kAxes) {
    if (estimated_sensor[axis].size() != grid[axis].sensor_positions.size())
      throw CalibrationError(std::string("need one VOG estimate per ") + axis_name(axis) + " sensor position");
    substituted[axis].sensor_positions = estimated_sensor[axis];
  }
  AutoCalibration out{fit(substituted), std::nullopt};
  if (ground_truth) {
    PerAxis<std::array<double, 9>> deltas;
    for (Axis axis : kAxes) {
      const auto est = out.model[axis].coefficients();
      const auto ref = (*ground_truth)[axis].coefficients();
      for (std::size_t k = 0; k < 9; ++k) deltas[axis][k] = est[k] - ref[k];
    }
    out.coefficient_deltas = deltas;
  }
  return out;
}

/// Below this |a| (raw units / deg^2) inversion uses the linear solution.
inline constexpr double kNearLinear = 1e-12;

struct Inversion {
  double eye_deg = 0.0;
  bool out_of_range = false;
};

/// Solves f(e, s) = raw for e within the eye domain.
inline Inversion invert(const CalibModel& model, double raw, double sensor_mm, Axis axis) {
  const auto& cal = model[axis];
  const Quadratic q = cal.at_sensor(sensor_mm);
  const double a = q.c[0], b = q.c[1], c = q.c[2] - raw;
  const Interval dom = cal.eye_domain;
  // Roots on the domain boundary count as inside.
  const double tol = 1e-9 * std::max(1.0, dom.hi - dom.lo);

  if (std::abs(a) < kNearLinear) {
    if (b == 0.0) throw CalibrationError("calibration is constant in eye position; cannot invert");
    const double e = -c / b;
    if (dom.contains(e, tol)) return {dom.clamp(e), false};
    return {dom.clamp(e), true};
  }
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return {dom.clamp(-b / (2.0 * a)), true};
  // Numerically stable pair of roots.
  const double qq = -0.5 * (b + std::copysign(std::sqrt(disc), b));
  std::array<double, 2> roots{qq / a, qq != 0.0 ? c / qq : qq / a};
  const bool in0 = dom.contains(roots[0], tol), in1 = dom.contains(roots[1], tol);
  if (in0 && in1 && std::abs(roots[0] - roots[1]) > tol)
    throw CalibrationError("two inverse roots inside the eye domain; calibration is not monotone");
  if (in0) return {dom.clamp(roots[0]), false};
  if (in1) return {dom.clamp(roots[1]), false};
  auto gap = [&](double e) { return e < dom.lo ? dom.lo - e : e - dom.hi; };
  const double nearer = gap(roots[0]) <= gap(roots[1]) ? roots[0] : roots[1];
  return {dom.clamp(nearer), true};
}

// --- persistence --------------------------------------------------------

inline constexpr const char* kCalibHeader = "# psv-calib v1";

inline void save_model(const CalibModel& model, std::ostream& out) {
  out << kCalibHeader << '\n';
  out << std::setprecision(17);
  static const char* names[9] = {"a1", "a2", "a3", "b1", "b2", "b3", "c1", "c2", "c3"};
  for (Axis axis : kAxes) {
    const char* tag = axis == Axis::Horizontal ? "h" : "v";
    const auto& cal = model[axis];
    const auto coef = cal.coefficients();
    for (std::size_t k = 0; k < 9; ++k) out << tag << '.' << names[k] << " = " << coef[k] << '\n';
    out << tag << ".eye_min = " << cal.eye_domain.lo << '\n' << tag << ".eye_max = " << cal.eye_domain.hi << '\n';
    out << tag << ".sensor_min = " << cal.sensor_domain.lo << '\n'
        << tag << ".sensor_max = " << cal.sensor_domain.hi << '\n';
  }
}

inline void save_model(const CalibModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  save_model(model, out);
  if (!out) throw Error("write failed for " + path);
}

inline CalibModel load_model(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCalibHeader) throw Error("not a psv calibration file (bad header)");
  std::map<std::string, double> kv;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("malformed calibration line: " + line);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = std::stod(trim(line.substr(eq + 1)));
  }
  auto get = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw Error("calibration file is missing " + key);
    return it->second;
  };
  CalibModel model;
  for (Axis axis : kAxes) {
    const std::string tag = axis == Axis::Horizontal ? "h." : "v.";
    auto& cal = model[axis];
    for (int k = 0; k < 3; ++k) {
      cal.a.c[k] = get(tag + "a" + std::to_string(k + 1));
      cal.b.c[k] = get(tag + "b" + std::to_string(k + 1));
      cal.c.c[k] = get(tag + "c" + std::to_string(k + 1));
    }
    cal.eye_domain = {get(tag + "eye_min"), get(tag + "eye_max")};
    cal.sensor_domain = {get(tag + "sensor_min"), get(tag + "sensor_max")};
  }
  return model;
}

inline CalibModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open calibration file " + path);
  return load_model(in);
}

}  // namespace psv
