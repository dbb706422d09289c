#pragma once

// Analytic eye-scene renderer.
//
// World frame (mm): origin at the eyeball center, +x toward the nose (image
// right), +y downward (image down), +z out of the eye toward the sensors.
// The camera and the IR point lights form one rigid assembly; a SensorPose
// translates the whole assembly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "psv/common.hpp"

namespace psv {

/// Ground-truth eye rotation. theta_h > 0 is nasal, theta_v > 0 is downward.
struct EyeState {
  double theta_h = 0.0;       // deg
  double theta_v = 0.0;       // deg
  double pupil_radius = 1.5;  // mm

  void validate() const {
    if (!(std::abs(theta_h) <= 45.0) || !(std::abs(theta_v) <= 45.0))
      throw InvalidArgument("eye rotation must lie within +/-45 deg");
    if (!(pupil_radius > 0.5 && pupil_radius < 5.0))
      throw InvalidArgument("pupil_radius must lie in (0.5, 5.0) mm");
  }

  /// Unit gaze direction in world coordinates.
  Vec3 gaze() const {
    const double h = deg2rad(theta_h), v = deg2rad(theta_v);
    return {std::cos(v) * std::sin(h), std::sin(v), std::cos(v) * std::cos(h)};
  }
};

/// Translation of the rigid sensor assembly. dx > 0 moves away from the nose,
/// dy > 0 moves upward.
struct SensorPose {
  double dx = 0.0;  // mm
  double dy = 0.0;  // mm

  void validate() const {
    if (!(std::abs(dx) <= 5.0) || !(std::abs(dy) <= 5.0))
      throw InvalidArgument("sensor translation must lie within +/-5 mm");
  }

  double along(Axis axis) const { return axis == Axis::Horizontal ? dx : dy; }

  /// World-space displacement applied to every element of the assembly.
  Vec3 translation() const { return {-dx, -dy, 0.0}; }
};

struct Reflectance {
  double sclera = 0.9;
  double iris = 0.45;
  double pupil = 0.05;
  double glint = 1.0;
};

struct SceneConfig {
  double eyeball_radius = 12.0;       // mm
  double cornea_radius = 7.8;         // mm
  double cornea_center_offset = 5.0;  // mm from the eyeball center along the gaze
  double camera_distance = 50.0;      // mm from the neutral pupil center
  double camera_offset_v = 0.0;       // mm below the neutral pupil center
  // Relative to the neutral pupil center, same axes as the world frame.
  std::vector<Vec3> light_positions = {{-14.0, 10.0, 30.0}, {14.0, 10.0, 30.0}};
  double fov = 45.0;  // horizontal, deg
  int width = 320;
  int height = 240;
  Reflectance reflectance;
  double iris_radius = 6.0;     // mm
  double glint_sigma_px = 2.0;  // Gaussian spot size

  /// Configuration of the low-rate VOG camera: same lights, camera 10 mm lower.
  static SceneConfig vog_default() {
    SceneConfig cfg;
    cfg.camera_offset_v = 10.0;
    return cfg;
  }

  void validate() const {
    if (width <= 0 || height <= 0) throw InvalidArgument("frame size must be positive");
    if (!(fov > 10.0 && fov < 90.0)) throw InvalidArgument("fov must lie in (10, 90) deg");
    const auto& r = reflectance;
    if (!(r.pupil < r.iris && r.iris < r.sclera && r.sclera < r.glint))
      throw InvalidArgument("reflectances must be ordered pupil < iris < sclera < glint");
    if (!(r.pupil >= 0.0 && r.glint <= 1.0))
      throw InvalidArgument("reflectances must lie in [0, 1]");
    if (!(eyeball_radius > 0 && cornea_radius > 0 && camera_distance > 0))
      throw InvalidArgument("radii and camera distance must be positive");
    if (!(iris_radius > 0 && iris_radius < eyeball_radius))
      throw InvalidArgument("iris_radius must lie in (0, eyeball_radius)");
    if (!(glint_sigma_px > 0)) throw InvalidArgument("glint_sigma_px must be positive");
  }

  double focal_px() const { return 0.5 * width / std::tan(deg2rad(0.5 * fov)); }
  /// Angular pixel pitch used to place photodiode windows.
  double deg_per_px() const { return fov / width; }
  Point2 principal_point() const { return {0.5 * (width - 1), 0.5 * (height - 1)}; }
};

/// Pixel projection with an off-frame flag.
struct Projection {
  Point2 px;
  bool in_frame = true;
};

/// Pinhole camera attached to the sensor assembly. It is aimed at the neutral
/// pupil center and only translates with the assembly.
class Camera {
 public:
  Camera(const SceneConfig& cfg, SensorPose pose)
      : focal_(cfg.focal_px()), center_(cfg.principal_point()), width_(cfg.width), height_(cfg.height) {
    const Vec3 neutral{0.0, cfg.camera_offset_v, cfg.eyeball_radius + cfg.camera_distance};
    const Vec3 aim{0.0, 0.0, cfg.eyeball_radius};
    forward_ = normalized(aim - neutral);
    right_ = normalized(Vec3{1.0, 0.0, 0.0} - forward_ * forward_.x);
    down_ = cross(right_, forward_);
    position_ = neutral + pose.translation();
  }

  const Vec3& position() const { return position_; }

  double depth(Vec3 p) const { return dot(p - position_, forward_); }

  Projection project(Vec3 p) const {
    const Vec3 v = p - position_;
    const double z = dot(v, forward_);
    if (z <= 0.0) return {{0.0, 0.0}, false};
    const Point2 px{center_.x + focal_ * dot(v, right_) / z, center_.y + focal_ * dot(v, down_) / z};
    const bool inside = px.x >= -0.5 && px.x <= width_ - 0.5 && px.y >= -0.5 && px.y <= height_ - 0.5;
    return {px, inside};
  }

  Vec3 ray(double px, double py) const {
    return normalized(forward_ * focal_ + right_ * (px - center_.x) + down_ * (py - center_.y));
  }

 private:
  double focal_;
  Point2 center_;
  int width_, height_;
  Vec3 position_, forward_, right_, down_;
};

struct FrameTruth {
  Projection pupil_center_px;
  /// One entry per light; nullopt when the reflection falls outside the cornea.
  std::vector<std::optional<Projection>> cr_px;
};

/// Rendered grayscale frame, row-major, intensities in [0, 1].
struct Frame {
  int width = 0;
  int height = 0;
  std::vector<double> intensities;
  std::optional<FrameTruth> truth;

  Frame() = default;
  Frame(int w, int h, double fill = 0.0)
      : width(w), height(h), intensities(static_cast<std::size_t>(w) * h, fill) {}

  double at(int x, int y) const { return intensities[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return intensities[static_cast<std::size_t>(y) * width + x]; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
};

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

namespace detail {

inline void check_frustum(const Camera& cam) {
  const Projection c = cam.project(Vec3{});
  if (!c.in_frame)
    throw FrustumError("eye center projects outside the camera frustum (" + std::to_string(c.px.x) + ", " +
                       std::to_string(c.px.y) + ")");
}

/// Smooth coverage of a region whose boundary is `dist_px` away (negative
/// inside), blended over one pixel.
inline double coverage(double dist_px) { return std::clamp(0.5 - dist_px, 0.0, 1.0); }

}  // namespace detail

/// Projection of the pupil center (the point on the eyeball sphere along the
/// gaze). Off-frame results carry in_frame = false.
inline Projection pupil_center_px(const EyeState& eye, SensorPose pose, const SceneConfig& cfg) {
  const Camera cam(cfg, pose);
  return cam.project(eye.gaze() * cfg.eyeball_radius);
}

/// Virtual image of a light source in the corneal mirror: half a corneal
/// radius behind the surface, on the line from the cornea center to the light.
/// nullopt when that point lies outside the corneal cap.
inline std::optional<Vec3> corneal_reflection_point(const EyeState& eye, SensorPose pose, const SceneConfig& cfg,
                                                    std::size_t light_index) {
  if (light_index >= cfg.light_positions.size()) throw InvalidArgument("light index out of range");
  const Vec3 gaze = eye.gaze();
  const Vec3 cornea_center = gaze * cfg.cornea_center_offset;
  const Vec3 light = cfg.light_positions[light_index] + Vec3{0.0, 0.0, cfg.eyeball_radius} + pose.translation();
  const Vec3 u = normalized(light - cornea_center);
  const double cap = std::asin(std::min(1.0, cfg.iris_radius / cfg.cornea_radius));
  if (dot(u, gaze) < std::cos(cap)) return std::nullopt;
  return cornea_center + u * (0.5 * cfg.cornea_radius);
}

inline std::optional<Projection> corneal_reflection_px(const EyeState& eye, SensorPose pose, const SceneConfig& cfg,
                                                       std::size_t light_index) {
  const auto point = corneal_reflection_point(eye, pose, cfg, light_index);
  if (!point) return std::nullopt;
  const Camera cam(cfg, pose);
  detail::check_frustum(cam);
  return cam.project(*point);
}

/// Renders the eye as seen by the sensor camera. When `region` is given only
/// those pixels are shaded; the rest hold the sclera reflectance.
inline Frame render_frame(const EyeState& eye, SensorPose pose, const SceneConfig& cfg,
                          std::optional<PixelRect> region = std::nullopt) {
  eye.validate();
  pose.validate();
  cfg.validate();
  const Camera cam(cfg, pose);
  detail::check_frustum(cam);

  const auto& refl = cfg.reflectance;
  const double radius = cfg.eyeball_radius;
  const Vec3 gaze = eye.gaze();
  const double arc_pupil = radius * std::asin(std::min(1.0, eye.pupil_radius / radius));
  const double arc_iris = radius * std::asin(cfg.iris_radius / radius);

  Frame frame(cfg.width, cfg.height, refl.sclera);
  PixelRect rect{0, 0, cfg.width, cfg.height};
  if (region) {
    rect = {std::max(0, region->x0), std::max(0, region->y0), std::min(cfg.width, region->x1),
            std::min(cfg.height, region->y1)};
  }

  const Vec3 origin = cam.position();
  const double oc2 = dot(origin, origin) - radius * radius;
  for (int y = rect.y0; y < rect.y1; ++y) {
    for (int x = rect.x0; x < rect.x1; ++x) {
      const Vec3 dir = cam.ray(x, y);
      const double b = dot(origin, dir);
      const double disc = b * b - oc2;
      if (disc < 0.0) continue;
      const double t = -b - std::sqrt(disc);
      if (t <= 0.0) continue;
      const Vec3 p = origin + dir * t;
      const Vec3 n = p * (1.0 / radius);
      const double cos_a = std::clamp(dot(n, gaze), -1.0, 1.0);
      const double alpha = std::acos(cos_a);
      const double arc = radius * alpha;
      if (arc > arc_iris + 0.5) continue;

      // Image-space length of one mm of arc, measured away from the gaze axis.
      double px_per_mm;
      const double sin_a = std::sin(alpha);
      if (sin_a > 1e-6) {
        const Vec3 tangent = (n * cos_a - gaze) * (1.0 / sin_a);
        const double step = 0.01;
        const Projection a = cam.project(p);
        const Projection c = cam.project(p + tangent * step);
        px_per_mm = distance(a.px, c.px) / step;
      } else {
        px_per_mm = cfg.focal_px() / t;
      }
      const double w_pupil = detail::coverage((arc - arc_pupil) * px_per_mm);
      const double w_iris = detail::coverage((arc - arc_iris) * px_per_mm);
      frame.at(x, y) = refl.pupil * w_pupil + refl.iris * (w_iris - w_pupil) + refl.sclera * (1.0 - w_iris);
    }
  }

  FrameTruth truth;
  truth.pupil_center_px = cam.project(gaze * radius);
  const double sigma = cfg.glint_sigma_px;
  const double reach = 4.0 * sigma;
  for (std::size_t k = 0; k < cfg.light_positions.size(); ++k) {
    const auto point = corneal_reflection_point(eye, pose, cfg, k);
    if (!point) {
      truth.cr_px.emplace_back(std::nullopt);
      continue;
    }
    const Projection g = cam.project(*point);
    truth.cr_px.emplace_back(g);
    const int gx0 = std::max(rect.x0, static_cast<int>(std::floor(g.px.x - reach)));
    const int gx1 = std::min(rect.x1, static_cast<int>(std::ceil(g.px.x + reach)) + 1);
    const int gy0 = std::max(rect.y0, static_cast<int>(std::floor(g.px.y - reach)));
    const int gy1 = std::min(rect.y1, static_cast<int>(std::ceil(g.px.y + reach)) + 1);
    for (int y = gy0; y < gy1; ++y) {
      for (int x = gx0; x < gx1; ++x) {
        const double r2 = (x - g.px.x) * (x - g.px.x) + (y - g.px.y) * (y - g.px.y);
        frame.at(x, y) += refl.glint * std::exp(-r2 / (2.0 * sigma * sigma));
      }
    }
  }
  for (int y = rect.y0; y < rect.y1; ++y)
    for (int x = rect.x0; x < rect.x1; ++x) frame.at(x, y) = std::clamp(frame.at(x, y), 0.0, 1.0);

  frame.truth = std::move(truth);
  return frame;
}

/// Binary PGM (P5, maxval 255), intensity = round(value * 255). A non-empty
/// `comment` is stored as a header comment line.
inline void write_pgm(const Frame& frame, const std::string& path, const std::string& comment = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << "P5\n";
  if (!comment.empty()) out << "# " << comment << '\n';
  out << frame.width << ' ' << frame.height << "\n255\n";
  std::vector<unsigned char> bytes(frame.intensities.size());
  std::transform(frame.intensities.begin(), frame.intensities.end(), bytes.begin(), [](double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  });
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path);
}

}  // namespace psv
