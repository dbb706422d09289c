#pragma once

#include <vector>

#include "psv/calib.hpp"

namespace psv::test {

/// Horizontal-like and vertical-like coefficient sets with realistic magnitudes.
inline CalibModel known_model() {
  CalibModel m;
  m[Axis::Horizontal].a = {{1.0e-6, 2.0e-6, 2.0e-5}};
  m[Axis::Horizontal].b = {{1.0e-4, 3.0e-3, -2.8e-2}};
  m[Axis::Horizontal].c = {{1.0e-3, 5.0e-2, 1.0e-2}};
  m[Axis::Vertical].a = {{-2.0e-6, 1.0e-6, 1.0e-5}};
  m[Axis::Vertical].b = {{2.0e-4, -2.0e-3, -2.6e-2}};
  m[Axis::Vertical].c = {{-5.0e-4, 4.0e-2, 3.0e-2}};
  for (Axis a : kAxes) {
    m[a].eye_domain = {-10, 10};
    m[a].sensor_domain = {-2, 2};
  }
  return m;
}

/// Grid of forward() values of `model` on the given positions.
inline CalibGrid sample_grid(const CalibModel& model, const std::vector<double>& eye = {-10, 0, 10},
                             const std::vector<double>& sensor = {-2, 0, 2}) {
  CalibGrid g;
  for (Axis a : kAxes) {
    g[a].eye_positions = eye;
    g[a].sensor_positions = sensor;
    for (double s : sensor) {
      std::vector<double> row;
      for (double e : eye) row.push_back(forward(model, e, s, a));
      g[a].raw.push_back(row);
    }
  }
  return g;
}

inline double relative_error(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

}  // namespace psv::test
