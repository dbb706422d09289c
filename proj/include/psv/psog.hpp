#pragma once

// Four-photodiode photosensor oculography. Each photodiode is simulated by a
// Gaussian-weighted average of the frame intensities inside its square
// reception window; horizontal and vertical raw outputs are the differential
// combinations of the four diodes.

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>
#include <vector>

#include "psv/common.hpp"
#include "psv/scene.hpp"

namespace psv {

namespace constants {
inline constexpr double kElectronCharge = 1.602176634e-19;  // C
inline constexpr double kBoltzmann = 1.38e-23;              // J/K
}  // namespace constants

struct PhotodiodeParams {
  double responsivity = 0.5;                // A/W
  double reverse_saturation_current = 1e-12;  // A
  double bias_voltage = 0.0;                // V, zero in photovoltaic mode
  double temperature = 300.0;               // K

  void validate() const {
    if (!(temperature > 0)) throw InvalidArgument("temperature must be positive");
    if (!(responsivity > 0)) throw InvalidArgument("responsivity must be positive");
  }
};

/// Photocurrent of the controlled source, I_p = R * P.
inline double photocurrent(double incident_power_w, const PhotodiodeParams& params) {
  if (incident_power_w < 0) throw InvalidArgument("incident power must be non-negative");
  return params.responsivity * incident_power_w;
}

/// Exponential diode current, I_d = I_s * (exp(q V / (k T)) - 1).
inline double diode_current(const PhotodiodeParams& params) {
  params.validate();
  const double thermal_voltage = constants::kBoltzmann * params.temperature / constants::kElectronCharge;
  return params.reverse_saturation_current * std::expm1(params.bias_voltage / thermal_voltage);
}

/// Window offsets (deg) are relative to the eye center in the sensor view:
/// x > 0 nasal, y > 0 downward.
struct AngularOffset {
  double x = 0.0;
  double y = 0.0;
};

struct PhotosensorLayout {
  // PD1 upper-nasal, PD2 upper-temporal, PD3 lower-temporal, PD4 lower-nasal.
  std::array<AngularOffset, 4> window_centers{{{4.5, -4.5}, {-4.5, -4.5}, {-4.5, 4.5}, {4.5, 4.5}}};
  double window_size = 13.0;  // deg, square side
  double sigma_ratio = 0.25;  // Gaussian sigma as a fraction of the side

  void validate() const {
    if (!(window_size > 0)) throw InvalidArgument("window_size must be positive");
    if (!(sigma_ratio > 0)) throw InvalidArgument("sigma_ratio must be positive");
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = i + 1; j < 4; ++j) {
        const auto& a = window_centers[i];
        const auto& b = window_centers[j];
        if (std::abs(a.x - b.x) >= window_size || std::abs(a.y - b.y) >= window_size)
          throw InvalidArgument("photodiode windows must pairwise overlap");
      }
  }
};

struct PsogSample {
  std::array<double, 4> i_pd{};
  double i_h = 0.0;
  double i_v = 0.0;
  double t = 0.0;

  double along(Axis axis) const { return axis == Axis::Horizontal ? i_h : i_v; }

  static PsogSample combine(const std::array<double, 4>& pd, double t) {
    PsogSample s;
    s.i_pd = pd;
    s.i_h = (pd[0] + pd[3]) - (pd[1] + pd[2]);
    s.i_v = (pd[0] + pd[1]) - (pd[2] + pd[3]);
    s.t = t;
    return s;
  }
};

/// Gaussian reception window of one photodiode, resolved to pixels.
class PhotodiodeWindow {
 public:
  PhotodiodeWindow(AngularOffset center, const PhotosensorLayout& layout, const SceneConfig& cfg)
      : width_(cfg.width), height_(cfg.height) {
    const double pitch = cfg.deg_per_px();
    const Point2 pp = cfg.principal_point();
    const double cx = pp.x + center.x / pitch;
    const double cy = pp.y + center.y / pitch;
    const double half = 0.5 * layout.window_size / pitch;
    const double sigma = layout.sigma_ratio * layout.window_size / pitch;
    x0_ = static_cast<int>(std::ceil(cx - half));
    x1_ = static_cast<int>(std::floor(cx + half)) + 1;
    y0_ = static_cast<int>(std::ceil(cy - half));
    y1_ = static_cast<int>(std::floor(cy + half)) + 1;
    const int cx0 = std::max(0, x0_), cx1 = std::min(width_, x1_);
    const int cy0 = std::max(0, y0_), cy1 = std::min(height_, y1_);
    if (cx0 >= cx1 || cy0 >= cy1) throw NoInformation("photodiode window lies entirely outside the frame");
    clip_ = {cx0, cy0, cx1, cy1};
    weights_.reserve(static_cast<std::size_t>(cx1 - cx0) * (cy1 - cy0));
    for (int y = cy0; y < cy1; ++y)
      for (int x = cx0; x < cx1; ++x) {
        const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        weights_.push_back(std::exp(-r2 / (2.0 * sigma * sigma)));
      }
    weight_sum_ = 0.0;
    for (double w : weights_) weight_sum_ += w;
  }

  /// In-frame pixels covered by the window.
  const PixelRect& region() const { return clip_; }

  double output(const Frame& frame) const {
    if (frame.width != width_ || frame.height != height_)
      throw InvalidArgument("frame size does not match the sensor configuration");
    double acc = 0.0;
    std::size_t k = 0;
    for (int y = clip_.y0; y < clip_.y1; ++y) {
      const double* row = &frame.intensities[static_cast<std::size_t>(y) * frame.width];
      for (int x = clip_.x0; x < clip_.x1; ++x) acc += weights_[k++] * row[x];
    }
    return acc / weight_sum_;
  }

 private:
  int width_, height_;
  int x0_, x1_, y0_, y1_;
  PixelRect clip_;
  std::vector<double> weights_;
  double weight_sum_;
};

/// The four photodiodes of one sensor assembly, with precomputed weights.
class PhotosensorArray {
 public:
  PhotosensorArray(const PhotosensorLayout& layout, const SceneConfig& cfg)
      : windows_{PhotodiodeWindow(layout.window_centers[0], layout, cfg),
                 PhotodiodeWindow(layout.window_centers[1], layout, cfg),
                 PhotodiodeWindow(layout.window_centers[2], layout, cfg),
                 PhotodiodeWindow(layout.window_centers[3], layout, cfg)} {
    layout.validate();
  }

  PsogSample sample(const Frame& frame, double t = 0.0) const {
    std::array<double, 4> pd{};
    for (std::size_t i = 0; i < 4; ++i) pd[i] = windows_[i].output(frame);
    return PsogSample::combine(pd, t);
  }

  /// Bounding box of every pixel any photodiode reads.
  PixelRect region() const {
    PixelRect r = windows_[0].region();
    for (const auto& w : windows_) {
      r.x0 = std::min(r.x0, w.region().x0);
      r.y0 = std::min(r.y0, w.region().y0);
      r.x1 = std::max(r.x1, w.region().x1);
      r.y1 = std::max(r.y1, w.region().y1);
    }
    return r;
  }

 private:
  std::array<PhotodiodeWindow, 4> windows_;
};

/// Gaussian-weighted mean of the in-frame pixels of one reception window.
inline double photodiode_output(const Frame& frame, AngularOffset center, const PhotosensorLayout& layout,
                                const SceneConfig& cfg) {
  return PhotodiodeWindow(center, layout, cfg).output(frame);
}

inline PsogSample psog_sample(const Frame& frame, const PhotosensorLayout& layout, const SceneConfig& cfg,
                              double t = 0.0) {
  return PhotosensorArray(layout, cfg).sample(frame, t);
}

/// CSV row in the `t,i_pd1,i_pd2,i_pd3,i_pd4,i_h,i_v` schema.
inline void write_csv_row(std::ostream& out, const PsogSample& s) {
  out << s.t << ',' << s.i_pd[0] << ',' << s.i_pd[1] << ',' << s.i_pd[2] << ',' << s.i_pd[3] << ',' << s.i_h << ','
      << s.i_v << '\n';
}

inline constexpr const char* kPsogCsvHeader = "t,i_pd1,i_pd2,i_pd3,i_pd4,i_h,i_v";

}  // namespace psv
