#pragma once
#include <cmath>

namespace nrpos {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Wrap into [0, 360).
inline double wrap_deg_0_360(double deg) {
  double w = deg - 360.0 * std::floor(deg / 360.0);
  if (w >= 360.0) w -= 360.0;  // guards against floor rounding at the seam
  if (w < 0.0) w += 360.0;
  return w;
}

/// Wrap into [-180, 180).
inline double wrap_deg_pm180(double deg) {
  double w = deg - 360.0 * std::floor((deg + 180.0) / 360.0);
  if (w >= 180.0) w -= 360.0;
  if (w < -180.0) w += 360.0;
  return w;
}

/// Wrap into (-pi, pi].
inline double wrap_rad_pm_pi(double rad) {
  double w = rad - 2.0 * kPi * std::floor((rad + kPi) / (2.0 * kPi));
  if (w > kPi) w -= 2.0 * kPi;
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

/// Wrap into [-period/2, period/2). Used for cycle residuals in meters.
inline double wrap_to_half_period(double value, double period) {
  double w = value - period * std::floor(value / period + 0.5);
  if (w >= 0.5 * period) w -= period;
  if (w < -0.5 * period) w += period;
  return w;
}

}  // namespace nrpos
