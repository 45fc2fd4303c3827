#pragma once
#include <cmath>
#include <stdexcept>

namespace nrpos {

/// Exact SI value, m/s.
inline constexpr double kSpeedOfLight = 299792458.0;

/// A point in the global right-handed Cartesian frame, meters.
struct Position3D {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend Position3D operator+(const Position3D& a, const Position3D& b) {
    return {a.x + b.x, a.y + b.y, a.z + b.z};
  }
  friend Position3D operator-(const Position3D& a, const Position3D& b) {
    return {a.x - b.x, a.y - b.y, a.z - b.z};
  }
  friend Position3D operator*(double s, const Position3D& p) {
    return {s * p.x, s * p.y, s * p.z};
  }
  friend bool operator==(const Position3D& a, const Position3D& b) = default;

  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
  }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline double dot(const Position3D& a, const Position3D& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

/// Euclidean distance, meters.
inline double distance(const Position3D& a, const Position3D& b) {
  return (a - b).norm();
}

/// Carrier wavelength in meters. Frequency must be positive.
inline double wavelength(double frequency_hz) {
  if (!(frequency_hz > 0.0)) {
    throw std::invalid_argument("wavelength: frequency must be positive");
  }
  return kSpeedOfLight / frequency_hz;
}

}  // namespace nrpos
