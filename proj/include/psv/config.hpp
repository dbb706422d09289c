#pragma once

// Run configuration: sectioned INI text with every default embedded.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "psv/common.hpp"
#include "psv/eval.hpp"
#include "psv/scan.hpp"

namespace psv {

struct ScenarioConfig {
  std::string kind = "hv";  // hv | tx | csv
  HvSpec hv{};
  ReadingSpec reading{};
  std::string csv_path;
  double csv_rate = 1000.0;
};

struct ShiftConfig {
  std::vector<double> grid{-1.75, -1.25, -0.75, -0.25, 0.25, 0.75, 1.25, 1.75};  // mm
  double max_mm = 1.75;
  double hv_event_s = 4.0;
  double tx_event_s = 2.5;
  bool orthogonal = false;  // also place shifts over movements on the other axis
};

/// Pass thresholds checked by `run`.
struct Thresholds {
  double baseline_accuracy_deg = 1.0;
  double baseline_crosstalk_pct = 15.0;
  double shifted_traditional_min_deg = 2.0;
  double shifted_corrected_max_deg = 1.5;
  double shifted_min_mm = 0.5;  // corrected-below-traditional applies from this magnitude up
  double traditional_floor_mm = 1.0;  // shifted_traditional_min_deg applies from this magnitude up
};

struct RunConfig {
  PipelineConfig pipeline{};
  double vog_camera_offset_v = 10.0;  // mm; the VOG scene is the PSOG scene with this offset
  ScanSpec scan{};
  ScenarioConfig scenario{};
  ShiftConfig shifts{};
  Thresholds thresholds{};
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  unsigned jobs = 1;

  /// VOG scene derived from the PSOG scene.
  void sync_vog_scene() {
    pipeline.vog_scene = pipeline.psog_scene;
    pipeline.vog_scene.camera_offset_v = vog_camera_offset_v;
  }

  void validate() const {
    pipeline.validate();
    if (jobs == 0) throw InvalidArgument("jobs must be at least 1");
    if (scenario.kind != "hv" && scenario.kind != "tx" && scenario.kind != "csv")
      throw InvalidArgument("scenario.kind must be hv, tx or csv");
    if (scenario.kind == "csv" && scenario.csv_path.empty())
      throw InvalidArgument("scenario.csv_path is required for csv scenarios");
    scenario.hv.validate();
    for (double s : shifts.grid)
      if (std::abs(s) > shifts.max_mm) throw InvalidArgument("shift grid value exceeds shifts.max_mm");
  }
};

namespace detail {

/// Shortest text that reads back to the same double.
inline std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

inline std::vector<double> split_doubles(const std::string& text, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw InvalidArgument("config key " + key + ": not a number list: " + text);
    }
  }
  return out;
}

inline std::string format_lights(const std::vector<Vec3>& lights) {
  std::string s;
  for (std::size_t i = 0; i < lights.size(); ++i)
    s += (i ? ";" : "") + fmt(lights[i].x) + ',' + fmt(lights[i].y) + ',' + fmt(lights[i].z);
  return s;
}

inline std::vector<Vec3> parse_lights(const std::string& text) {
  std::vector<Vec3> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    const auto v = split_doubles(item, "scene.lights");
    if (v.size() != 3) throw InvalidArgument("scene.lights entries need x,y,z");
    out.push_back({v[0], v[1], v[2]});
  }
  return out;
}

inline std::string format_windows(const std::array<AngularOffset, 4>& w) {
  std::vector<double> flat;
  for (const auto& o : w) {
    flat.push_back(o.x);
    flat.push_back(o.y);
  }
  return join(flat);
}

/// Binds every config field to a key so loading and dumping share one list.
template <class Visitor>
void visit_fields(RunConfig& c, Visitor&& f) {
  auto& sc = c.pipeline.psog_scene;
  f("scene.eyeball_radius", sc.eyeball_radius);
  f("scene.cornea_radius", sc.cornea_radius);
  f("scene.cornea_center_offset", sc.cornea_center_offset);
  f("scene.iris_radius", sc.iris_radius);
  f("scene.camera_distance", sc.camera_distance);
  f("scene.camera_offset_v", sc.camera_offset_v);
  f("scene.fov", sc.fov);
  f("scene.width", sc.width);
  f("scene.height", sc.height);
  f("scene.glint_sigma_px", sc.glint_sigma_px);
  f("scene.reflectance_sclera", sc.reflectance.sclera);
  f("scene.reflectance_iris", sc.reflectance.iris);
  f("scene.reflectance_pupil", sc.reflectance.pupil);
  f("scene.reflectance_glint", sc.reflectance.glint);
  f("scene.lights", sc.light_positions);
  f("scene.pupil_radius", c.pipeline.pupil_radius);
  f("vog_camera.camera_offset_v", c.vog_camera_offset_v);
  f("psog.window_size", c.pipeline.layout.window_size);
  f("psog.sigma_ratio", c.pipeline.layout.sigma_ratio);
  f("psog.window_centers", c.pipeline.layout.window_centers);
  f("vog.pupil_threshold", c.pipeline.thresholds.pupil);
  f("vog.glint_threshold", c.pipeline.thresholds.glint);
  f("vog.min_pupil_px", c.pipeline.thresholds.min_pupil_px);
  f("vog.max_shift_mm", c.pipeline.max_shift_mm);
  f("vog.gain_sweep_eye_deg", c.pipeline.gain_sweep.eye_deg);
  f("vog.gain_sweep_pose_mm", c.pipeline.gain_sweep.pose_mm);
  f("stream.f_psog", c.pipeline.stream.f_psog);
  f("stream.f_vog", c.pipeline.stream.f_vog);
  f("stream.ma_window", c.pipeline.stream.ma_window);
  f("stream.shift_gate_mm", c.pipeline.stream.shift_gate_mm);
  f("stream.smooth_psog", c.pipeline.stream.smooth_psog);
  f("stream.smooth_shift", c.pipeline.stream.smooth_shift);
  f("calibration.eye_deg", c.pipeline.calib_grid.eye_deg);
  f("calibration.sensor_mm", c.pipeline.calib_grid.sensor_mm);
  f("scan.eye_range", c.scan.eye_range);
  f("scan.eye_step", c.scan.eye_step);
  f("scan.shift_range", c.scan.shift_range);
  f("scan.shift_step", c.scan.shift_step);
  f("scan.separable_eye", c.scan.separable_eye);
  f("scan.full_shift_grid", c.scan.full_shift_grid);
  f("scenario.kind", c.scenario.kind);
  f("scenario.trim_s", c.pipeline.trim_s);
  f("scenario.amplitudes", c.scenario.hv.amplitudes);
  f("scenario.dwell", c.scenario.hv.dwell);
  f("scenario.saccades", c.scenario.hv.saccades);
  f("scenario.lines", c.scenario.reading.lines);
  f("scenario.reading_duration", c.scenario.reading.duration);
  f("scenario.csv_path", c.scenario.csv_path);
  f("scenario.csv_rate", c.scenario.csv_rate);
  f("shifts.grid", c.shifts.grid);
  f("shifts.max_mm", c.shifts.max_mm);
  f("shifts.hv_event_s", c.shifts.hv_event_s);
  f("shifts.tx_event_s", c.shifts.tx_event_s);
  f("shifts.orthogonal", c.shifts.orthogonal);
  f("acceptance.baseline_accuracy_deg", c.thresholds.baseline_accuracy_deg);
  f("acceptance.baseline_crosstalk_pct", c.thresholds.baseline_crosstalk_pct);
  f("acceptance.shifted_traditional_min_deg", c.thresholds.shifted_traditional_min_deg);
  f("acceptance.shifted_corrected_max_deg", c.thresholds.shifted_corrected_max_deg);
  f("acceptance.shifted_min_mm", c.thresholds.shifted_min_mm);
  f("acceptance.traditional_floor_mm", c.thresholds.traditional_floor_mm);
  f("run.out", c.out_dir);
  f("run.seed", c.seed);
  f("run.jobs", c.jobs);
}

struct Writer {
  boost::property_tree::ptree& tree;

  void operator()(const char* key, double v) { tree.put(key, fmt(v)); }
  void operator()(const char* key, bool v) { tree.put(key, v ? "true" : "false"); }
  void operator()(const char* key, const std::string& v) { tree.put(key, v); }
  void operator()(const char* key, const std::vector<double>& v) { tree.put(key, join(v)); }
  void operator()(const char* key, const std::vector<Vec3>& v) { tree.put(key, format_lights(v)); }
  void operator()(const char* key, const std::array<AngularOffset, 4>& v) { tree.put(key, format_windows(v)); }
  template <class I>
    requires std::is_integral_v<I>
  void operator()(const char* key, I v) {
    tree.put(key, std::to_string(v));
  }
};

struct Reader {
  const boost::property_tree::ptree& tree;

  std::optional<std::string> raw(const char* key) const {
    if (auto v = tree.get_optional<std::string>(key)) return *v;
    return std::nullopt;
  }

  void operator()(const char* key, double& v) {
    if (auto s = raw(key)) v = split_one(*s, key);
  }
  void operator()(const char* key, bool& v) {
    if (auto s = raw(key)) {
      if (*s == "true" || *s == "1")
        v = true;
      else if (*s == "false" || *s == "0")
        v = false;
      else
        throw InvalidArgument(std::string("config key ") + key + ": expected true or false");
    }
  }
  void operator()(const char* key, std::string& v) {
    if (auto s = raw(key)) v = *s;
  }
  void operator()(const char* key, std::vector<double>& v) {
    if (auto s = raw(key)) v = split_doubles(*s, key);
  }
  void operator()(const char* key, std::vector<Vec3>& v) {
    if (auto s = raw(key)) v = parse_lights(*s);
  }
  void operator()(const char* key, std::array<AngularOffset, 4>& v) {
    if (auto s = raw(key)) {
      const auto flat = split_doubles(*s, key);
      if (flat.size() != 8) throw InvalidArgument(std::string("config key ") + key + ": expected 8 values");
      for (std::size_t i = 0; i < 4; ++i) v[i] = {flat[2 * i], flat[2 * i + 1]};
    }
  }
  template <class I>
    requires std::is_integral_v<I>
  void operator()(const char* key, I& v) {
    if (auto s = raw(key)) {
      const double d = split_one(*s, key);
      if (d < 0 || d != std::floor(d))
        throw InvalidArgument(std::string("config key ") + key + ": expected a non-negative integer");
      v = static_cast<I>(d);
    }
  }

  static double split_one(const std::string& s, const char* key) {
    const auto v = split_doubles(s, key);
    if (v.size() != 1) throw InvalidArgument(std::string("config key ") + key + ": expected one number");
    return v[0];
  }
};

}  // namespace detail

inline std::string dump_config(const RunConfig& cfg) {
  boost::property_tree::ptree tree;
  RunConfig copy = cfg;
  detail::visit_fields(copy, detail::Writer{tree});
  std::ostringstream out;
  boost::property_tree::write_ini(out, tree);
  return out.str();
}

/// Overlays the keys present in `text` on the defaults. Unknown keys are an
/// error so typos do not pass silently.
inline RunConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw InvalidArgument(std::string("config: ") + e.message() + " at line " + std::to_string(e.line()));
  }
  RunConfig cfg;
  std::vector<std::string> known;
  detail::visit_fields(cfg, [&](const char* key, auto&) { known.emplace_back(key); });
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw InvalidArgument("config key outside a section: " + section);
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      if (std::find(known.begin(), known.end(), full) == known.end())
        throw InvalidArgument("unknown config key: " + full);
    }
  }
  detail::visit_fields(cfg, detail::Reader{tree});
  cfg.sync_vog_scene();
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Hash of the canonical dump, as 16 hex digits.
inline std::string config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(dump_config(cfg))));
  return buf;
}

}  // namespace psv
