#pragma once

// Dense scan of PSOG outputs over eye and sensor positions, and the PSOG
// sources the experiment harness samples from: a table interpolator (fast)
// and per-sample rendering (exact).

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "psv/common.hpp"
#include "psv/psog.hpp"
#include "psv/scene.hpp"

namespace psv {

/// Anything that yields the four photodiode outputs for an eye/sensor state.
class PsogSource {
 public:
  virtual ~PsogSource() = default;
  virtual std::array<double, 4> photodiodes(const EyeState& eye, SensorPose pose) const = 0;

  PsogSample sample(const EyeState& eye, SensorPose pose, double t = 0.0) const {
    return PsogSample::combine(photodiodes(eye, pose), t);
  }
};

/// Renders the photodiode region of a frame for every sample.
class RenderedPsog final : public PsogSource {
 public:
  RenderedPsog(SceneConfig scene, const PhotosensorLayout& layout)
      : scene_(std::move(scene)), sensors_(layout, scene_), region_(sensors_.region()) {}

  std::array<double, 4> photodiodes(const EyeState& eye, SensorPose pose) const override {
    return sensors_.sample(render_frame(eye, pose, scene_, region_)).i_pd;
  }

 private:
  SceneConfig scene_;
  PhotosensorArray sensors_;
  PixelRect region_;
};

/// Regular grid lo, lo + step, ..., n values.
struct GridAxis {
  double lo = 0.0;
  double step = 1.0;
  std::size_t n = 1;

  static GridAxis symmetric(double range, double step) {
    if (!(range >= 0.0)) throw InvalidArgument("scan range must be non-negative");
    if (range == 0.0) return {0.0, 1.0, 1};
    if (!(step > 0.0)) throw InvalidArgument("scan step must be positive");
    return {-range, step, static_cast<std::size_t>(std::llround(2.0 * range / step)) + 1};
  }

  double value(std::size_t i) const { return lo + static_cast<double>(i) * step; }
  double hi() const { return value(n - 1); }

  /// Bracketing index and weight of the upper neighbour. Values within 1e-9
  /// steps of a node snap to it.
  std::pair<std::size_t, double> locate(double x) const {
    if (n == 1) {
      if (std::abs(x - lo) > 1e-9) throw InvalidArgument("query outside the scanned range");
      return {0, 0.0};
    }
    const double u = (x - lo) / step;
    if (u < -1e-9 || u > static_cast<double>(n - 1) + 1e-9) throw InvalidArgument("query outside the scanned range");
    double i0 = std::floor(u);
    double w = u - i0;
    if (w > 1.0 - 1e-9) {
      i0 += 1.0;
      w = 0.0;
    } else if (w < 1e-9) {
      w = 0.0;
    }
    auto i = static_cast<std::size_t>(std::clamp(i0, 0.0, static_cast<double>(n - 1)));
    if (i == n - 1) w = 0.0;
    return {i, w};
  }
};

struct ScanSpec {
  double eye_range = 10.0;   // deg, symmetric
  double eye_step = 0.5;     // deg
  double shift_range = 2.0;  // mm, symmetric
  double shift_step = 0.5;   // mm
  /// Eye grid restricted to the two axis lines instead of the full product.
  bool separable_eye = false;
  /// Full dx x dy product instead of the two sensor axis lines.
  bool full_shift_grid = true;
  double pupil_radius = 1.5;
};

struct ScanRow {
  EyeState eye;
  SensorPose pose;
  PsogSample sample;
};

/// Photodiode outputs on a 4-D grid (theta_h, theta_v, dx, dy), possibly
/// sparse. Queries are multilinear; grid nodes with zero weight need not be
/// present.
class ScanTable {
 public:
  explicit ScanTable(const ScanSpec& spec)
      : spec_(spec),
        axes_{GridAxis::symmetric(spec.eye_range, spec.eye_step), GridAxis::symmetric(spec.eye_range, spec.eye_step),
              GridAxis::symmetric(spec.shift_range, spec.shift_step),
              GridAxis::symmetric(spec.shift_range, spec.shift_step)},
        values_(cell_count()),
        present_(cell_count(), 0) {}

  const ScanSpec& spec() const { return spec_; }
  const GridAxis& axis(std::size_t k) const { return axes_[k]; }

  /// Grid nodes the scan covers, in the canonical row order.
  std::vector<std::array<std::size_t, 4>> nodes() const {
    std::vector<std::array<std::size_t, 4>> out;
    const auto& [ah, av, ax, ay] = axes_;
    const std::size_t zh = center(ah), zv = center(av), zx = center(ax), zy = center(ay);
    for (std::size_t iy = 0; iy < ay.n; ++iy)
      for (std::size_t ix = 0; ix < ax.n; ++ix) {
        if (!spec_.full_shift_grid && ix != zx && iy != zy) continue;
        for (std::size_t iv = 0; iv < av.n; ++iv)
          for (std::size_t ih = 0; ih < ah.n; ++ih) {
            if (spec_.separable_eye && ih != zh && iv != zv) continue;
            out.push_back({ih, iv, ix, iy});
          }
      }
    return out;
  }

  ScanRow node_state(const std::array<std::size_t, 4>& node) const {
    ScanRow row;
    row.eye = {axes_[0].value(node[0]), axes_[1].value(node[1]), spec_.pupil_radius};
    row.pose = {axes_[2].value(node[2]), axes_[3].value(node[3])};
    return row;
  }

  void set(const std::array<std::size_t, 4>& node, const std::array<double, 4>& pd) {
    const std::size_t k = index(node);
    values_[k] = pd;
    present_[k] = 1;
  }

  /// Stores a row whose coordinates must fall on a grid node.
  void set(const ScanRow& row) {
    std::array<std::size_t, 4> node{};
    const double coords[4] = {row.eye.theta_h, row.eye.theta_v, row.pose.dx, row.pose.dy};
    for (std::size_t k = 0; k < 4; ++k) {
      const auto [i, w] = axes_[k].locate(coords[k]);
      if (w != 0.0) throw InvalidArgument("scan row does not lie on the table grid");
      node[k] = i;
    }
    set(node, row.sample.i_pd);
  }

  bool has(const std::array<std::size_t, 4>& node) const { return present_[index(node)] != 0; }

  std::array<double, 4> photodiodes(double theta_h, double theta_v, double dx, double dy) const {
    const double coords[4] = {theta_h, theta_v, dx, dy};
    std::array<std::pair<std::size_t, double>, 4> loc;
    for (std::size_t k = 0; k < 4; ++k) loc[k] = axes_[k].locate(coords[k]);
    std::array<double, 4> acc{};
    for (unsigned corner = 0; corner < 16; ++corner) {
      double weight = 1.0;
      std::array<std::size_t, 4> node{};
      for (std::size_t k = 0; k < 4; ++k) {
        const bool upper = (corner >> k) & 1u;
        weight *= upper ? loc[k].second : 1.0 - loc[k].second;
        node[k] = loc[k].first + (upper ? 1 : 0);
      }
      if (weight == 0.0) continue;
      if (!has(node)) throw InvalidArgument("query needs a grid node the scan did not cover");
      const auto& v = values_[index(node)];
      for (std::size_t j = 0; j < 4; ++j) acc[j] += weight * v[j];
    }
    return acc;
  }

  std::vector<ScanRow> rows() const {
    std::vector<ScanRow> out;
    for (const auto& node : nodes()) {
      if (!has(node)) continue;
      ScanRow row = node_state(node);
      row.sample = PsogSample::combine(values_[index(node)], 0.0);
      out.push_back(row);
    }
    return out;
  }

 private:
  static std::size_t center(const GridAxis& a) { return a.n / 2; }

  std::size_t cell_count() const { return axes_[0].n * axes_[1].n * axes_[2].n * axes_[3].n; }

  std::size_t index(const std::array<std::size_t, 4>& node) const {
    return ((node[3] * axes_[2].n + node[2]) * axes_[1].n + node[1]) * axes_[0].n + node[0];
  }

  ScanSpec spec_;
  std::array<GridAxis, 4> axes_;
  std::vector<std::array<double, 4>> values_;
  std::vector<char> present_;
};

/// Interpolating PSOG source over a filled scan table.
class TablePsog final : public PsogSource {
 public:
  explicit TablePsog(std::shared_ptr<const ScanTable> table) : table_(std::move(table)) {}

  std::array<double, 4> photodiodes(const EyeState& eye, SensorPose pose) const override {
    return table_->photodiodes(eye.theta_h, eye.theta_v, pose.dx, pose.dy);
  }

 private:
  std::shared_ptr<const ScanTable> table_;
};

/// Renders missing nodes of `table` in canonical order, at most `max_rows`
/// of them, split over `jobs` threads. `on_row` (if set) sees each new row in
/// canonical order. Returns the number of rows rendered.
inline std::size_t fill_scan(ScanTable& table, const SceneConfig& scene, const PhotosensorLayout& layout,
                             unsigned jobs = 1, const std::function<void(const ScanRow&)>& on_row = {},
                             std::size_t max_rows = std::numeric_limits<std::size_t>::max()) {
  std::vector<std::array<std::size_t, 4>> todo;
  for (const auto& node : table.nodes()) {
    if (todo.size() >= max_rows) break;
    if (!table.has(node)) todo.push_back(node);
  }
  const RenderedPsog source(scene, layout);
  std::vector<std::array<double, 4>> results(todo.size());
  auto render = [&](std::size_t i) {
    const ScanRow s = table.node_state(todo[i]);
    results[i] = source.photodiodes(s.eye, s.pose);
  };
  jobs = std::max(1u, jobs);
  if (jobs == 1) {
    for (std::size_t i = 0; i < todo.size(); ++i) render(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(jobs);
    std::vector<std::thread> workers;
    for (unsigned w = 0; w < jobs; ++w)
      workers.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < todo.size(); i = next++) render(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : workers) t.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  for (std::size_t i = 0; i < todo.size(); ++i) {
    table.set(todo[i], results[i]);
    if (on_row) {
      ScanRow row = table.node_state(todo[i]);
      row.sample = PsogSample::combine(results[i], 0.0);
      on_row(row);
    }
  }
  return todo.size();
}

inline constexpr const char* kScanCsvHeader = "theta_h,theta_v,dx,dy,i_pd1,i_pd2,i_pd3,i_pd4,i_h,i_v";

inline void write_scan_row(std::ostream& out, const ScanRow& r) {
  const auto old = out.precision(17);
  out << r.eye.theta_h << ',' << r.eye.theta_v << ',' << r.pose.dx << ',' << r.pose.dy;
  for (double v : r.sample.i_pd) out << ',' << v;
  out << ',' << r.sample.i_h << ',' << r.sample.i_v << '\n';
  out.precision(old);
}

/// Parses one data row; returns false for comments, headers and blank lines.
inline bool parse_scan_row(const std::string& line, ScanRow& row) {
  if (line.empty() || line[0] == '#' || line[0] == 't') return false;
  std::stringstream ss(line);
  std::array<double, 10> v{};
  char comma = 0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (k > 0 && !(ss >> comma && comma == ',')) throw Error("malformed scan row: " + line);
    if (!(ss >> v[k])) throw Error("malformed scan row: " + line);
  }
  row.eye.theta_h = v[0];
  row.eye.theta_v = v[1];
  row.pose = {v[2], v[3]};
  row.sample = PsogSample::combine({v[4], v[5], v[6], v[7]}, 0.0);
  return true;
}

inline std::size_t read_scan_rows(std::istream& in, ScanTable& table) {
  std::string line;
  std::size_t n = 0;
  ScanRow row;
  while (std::getline(in, line)) {
    if (!parse_scan_row(line, row)) continue;
    table.set(row);
    ++n;
  }
  return n;
}

}  // namespace psv
