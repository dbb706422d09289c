#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace psv {

inline constexpr double kPi = std::numbers::pi;

constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration or argument violates a documented invariant.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// The eye lies outside the camera frustum.
class FrustumError : public Error {
 public:
  using Error::Error;
};

/// A photodiode window captures no pixel of the frame.
class NoInformation : public Error {
 public:
  using Error::Error;
};

/// Least-squares or inversion failure in the calibration model.
class CalibrationError : public Error {
 public:
  using Error::Error;
};

enum class Axis { Horizontal = 0, Vertical = 1 };

inline const char* axis_name(Axis axis) {
  return axis == Axis::Horizontal ? "horizontal" : "vertical";
}

/// A value per calibration axis.
template <class T>
struct PerAxis {
  T h{};
  T v{};

  T& operator[](Axis axis) { return axis == Axis::Horizontal ? h : v; }
  const T& operator[](Axis axis) const { return axis == Axis::Horizontal ? h : v; }
};

inline constexpr Axis kAxes[] = {Axis::Horizontal, Axis::Vertical};

struct Vec3 {
  double x = 0, y = 0, z = 0;

  friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return a * s; }
  friend constexpr bool operator==(Vec3, Vec3) = default;
};

constexpr double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

constexpr Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

inline Vec3 normalized(Vec3 a) {
  const double n = norm(a);
  return n > 0 ? a * (1.0 / n) : a;
}

/// Image-plane point in pixels; x grows to the right, y grows downward.
struct Point2 {
  double x = 0, y = 0;

  friend constexpr Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend constexpr bool operator==(Point2, Point2) = default;

  constexpr double along(Axis axis) const { return axis == Axis::Horizontal ? x : y; }
};

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace psv
