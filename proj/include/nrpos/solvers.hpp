#pragma once
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nrpos/angles.hpp"
#include "nrpos/geometry.hpp"
#include "nrpos/measurements.hpp"

namespace nrpos {

// Measurement sets -> position estimates. All solvers work in meters
// internally; timing inputs are scaled by c up front.

struct SolveOptions {
  bool mode_2d = true;
  double fixed_z = 0.0;  // height pinned in 2D mode
  std::optional<Position3D> init;  // default: anchor centroid
  int max_iterations = 50;
  double step_tolerance_m = 1e-9;
  /// Residual acceptance for the converged flag (RMS meters). NaN selects an
  /// automatic rule: accept when RMS <= 0.5 * RMS(|measurements|) + 1e-6 m,
  /// which flags clearly infeasible systems while tolerating measurement
  /// noise. Infinity disables the check.
  double residual_accept_rms_m = std::numeric_limits<double>::quiet_NaN();
};

struct PositionEstimate {
  Position3D position;
  double residual_norm = 0.0;  // sqrt(sum of squared residuals), meters
  int iterations = 0;
  bool converged = false;
  std::optional<std::array<double, 9>> covariance_proxy;  // row-major 3x3
  std::string diagnostics;
};

struct TdoaObservation {
  Position3D ref_anchor;
  Position3D other_anchor;
  double rstd_s = 0.0;
  /// Known synchronization error (other minus ref transmit-time offset),
  /// subtracted from the measurement before solving.
  double sync_offset_s = 0.0;
};

struct RangeObservation {
  Position3D anchor;
  double range_m = 0.0;
};

struct BearingObservation {
  Position3D anchor;
  double azimuth_deg = 0.0;              // GCS
  std::optional<double> zenith_deg;      // set for 3D ray intersection
};

namespace detail {

struct GnProblem {
  // residual and gradient of one observation at p, meters
  std::function<double(std::size_t, const Position3D&, double[3])> eval;
  std::size_t count = 0;
  double measurement_rms_m = 0.0;
};

inline PositionEstimate gauss_newton(const GnProblem& prob, Position3D init,
                                     const SolveOptions& opt) {
  const int dim = opt.mode_2d ? 2 : 3;
  Position3D p = init;
  if (opt.mode_2d) p.z = opt.fixed_z;

  auto sum_sq = [&](const Position3D& q) {
    double s = 0.0;
    double g[3];
    for (std::size_t i = 0; i < prob.count; ++i) {
      const double r = prob.eval(i, q, g);
      s += r * r;
    }
    return s;
  };

  PositionEstimate est;
  double f = sum_sq(p);
  int it = 0;
  bool stalled = false;
  double jtj_final[3][3] = {{0}};
  for (; it < opt.max_iterations; ++it) {
    double jtj[3][3] = {{0}};
    double jtr[3] = {0};
    for (std::size_t i = 0; i < prob.count; ++i) {
      double g[3];
      const double r = prob.eval(i, p, g);
      for (int a = 0; a < dim; ++a) {
        jtr[a] += g[a] * r;
        for (int b = 0; b < dim; ++b) jtj[a][b] += g[a] * g[b];
      }
    }
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) jtj_final[a][b] = jtj[a][b];

    double step[3] = {0, 0, 0};
    bool solvable = true;
    if (dim == 2) {
      const double det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
      const double scale = std::max(jtj[0][0], jtj[1][1]);
      if (std::abs(det) <= 1e-12 * std::max(scale * scale, 1e-300)) {
        solvable = false;
      } else {
        step[0] = (-jtr[0] * jtj[1][1] + jtr[1] * jtj[0][1]) / det;
        step[1] = (-jtj[0][0] * jtr[1] + jtj[1][0] * jtr[0]) / det;
      }
    } else {
      const double a00 = jtj[0][0], a01 = jtj[0][1], a02 = jtj[0][2];
      const double a11 = jtj[1][1], a12 = jtj[1][2], a22 = jtj[2][2];
      const double det = a00 * (a11 * a22 - a12 * a12) -
                         a01 * (a01 * a22 - a12 * a02) +
                         a02 * (a01 * a12 - a11 * a02);
      const double scale = std::max({a00, a11, a22});
      if (std::abs(det) <= 1e-12 * std::max(scale * scale * scale, 1e-300)) {
        solvable = false;
      } else {
        const double b0 = -jtr[0], b1 = -jtr[1], b2 = -jtr[2];
        step[0] = (b0 * (a11 * a22 - a12 * a12) - a01 * (b1 * a22 - a12 * b2) +
                   a02 * (b1 * a12 - a11 * b2)) / det;
        step[1] = (a00 * (b1 * a22 - a12 * b2) - b0 * (a01 * a22 - a02 * a12) +
                   a02 * (a01 * b2 - b1 * a02)) / det;
        step[2] = (a00 * (a11 * b2 - b1 * a12) - a01 * (a01 * b2 - b1 * a02) +
                   b0 * (a01 * a12 - a11 * a02)) / det;
      }
    }
    if (!solvable) {
      est.diagnostics = "singular normal equations";
      stalled = true;
      break;
    }
    // halving line search keeps the accepted residual monotone
    double scale = 1.0;
    bool improved = false;
    Position3D next = p;
    double fn = f;
    for (int h = 0; h < 24; ++h) {
      Position3D cand{p.x + scale * step[0], p.y + scale * step[1],
                      p.z + (dim == 3 ? scale * step[2] : 0.0)};
      const double fc = sum_sq(cand);
      if (fc <= f) {
        next = cand;
        fn = fc;
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) {
      stalled = std::sqrt(f / static_cast<double>(prob.count)) >
                10.0 * opt.step_tolerance_m;
      break;
    }
    const double moved = std::hypot(next.x - p.x, next.y - p.y, next.z - p.z);
    p = next;
    f = fn;
    if (moved < opt.step_tolerance_m) {
      ++it;
      break;
    }
  }

  est.position = p;
  est.residual_norm = std::sqrt(f);
  est.iterations = it;
  const double rms = std::sqrt(f / static_cast<double>(prob.count));
  double accept = opt.residual_accept_rms_m;
  if (std::isnan(accept)) accept = 0.5 * prob.measurement_rms_m + 1e-6;
  est.converged = !stalled && rms <= accept;
  if (stalled && est.diagnostics.empty()) {
    est.diagnostics = "no improving step found";
  }
  if (!stalled && rms > accept) {
    est.diagnostics = "residual exceeds acceptance threshold";
  }
  // covariance proxy: s^2 (J'J)^-1 on the solved dimensions
  const std::size_t m = prob.count;
  const std::size_t n = static_cast<std::size_t>(dim);
  if (m > n) {
    const double s2 = f / static_cast<double>(m - n);
    std::array<double, 9> cov{};
    if (dim == 2) {
      const double det =
          jtj_final[0][0] * jtj_final[1][1] - jtj_final[0][1] * jtj_final[1][0];
      if (std::abs(det) > 0) {
        cov[0] = s2 * jtj_final[1][1] / det;
        cov[1] = -s2 * jtj_final[0][1] / det;
        cov[3] = -s2 * jtj_final[1][0] / det;
        cov[4] = s2 * jtj_final[0][0] / det;
        est.covariance_proxy = cov;
      }
    }
  }
  return est;
}

inline Position3D centroid(std::span<const Position3D> pts) {
  Position3D c{};
  for (const auto& p : pts) c = c + p;
  return (1.0 / static_cast<double>(pts.size())) * c;
}

/// Range and hyperbolic least squares are non-convex; a handful of
/// deterministic starts (the requested init or the centroid, then each
/// anchor) guards against local minima. The init/centroid start always runs
/// first, so the accepted residual never exceeds the residual there.
inline PositionEstimate gauss_newton_multi(const GnProblem& prob,
                                           const Position3D& primary_start,
                                           std::span<const Position3D> anchors,
                                           const SolveOptions& opt) {
  PositionEstimate best = gauss_newton(prob, primary_start, opt);
  auto better = [](const PositionEstimate& a, const PositionEstimate& b) {
    if (a.converged != b.converged) return a.converged;
    return a.residual_norm < b.residual_norm;
  };
  std::vector<Position3D> starts(anchors.begin(), anchors.end());
  for (const auto& s : starts) {
    if (distance(s, primary_start) < 1e-9) continue;
    PositionEstimate cand = gauss_newton(prob, s, opt);
    if (better(cand, best)) best = cand;
  }
  return best;
}

}  // namespace detail

/// Hyperbolic least squares on RSTD measurements. Needs >=3 observations in
/// 2D mode, >=4 in 3D.
inline PositionEstimate solve_tdoa(std::span<const TdoaObservation> obs,
                                   const SolveOptions& opt = {}) {
  const std::size_t need = opt.mode_2d ? 3 : 4;
  if (obs.size() < need) {
    throw std::invalid_argument("solve_tdoa: under-determined system");
  }
  std::vector<Position3D> anchors;
  std::vector<double> meas_m(obs.size());
  double msq = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    anchors.push_back(obs[i].ref_anchor);
    anchors.push_back(obs[i].other_anchor);
    meas_m[i] = (obs[i].rstd_s - obs[i].sync_offset_s) * kSpeedOfLight;
    msq += meas_m[i] * meas_m[i];
  }
  detail::GnProblem prob;
  prob.count = obs.size();
  prob.measurement_rms_m = std::sqrt(msq / static_cast<double>(obs.size()));
  prob.eval = [&obs, &meas_m](std::size_t i, const Position3D& p, double g[3]) {
    const Position3D va = p - obs[i].ref_anchor;
    const Position3D vb = p - obs[i].other_anchor;
    const double da = std::max(va.norm(), 1e-12);
    const double db = std::max(vb.norm(), 1e-12);
    g[0] = vb.x / db - va.x / da;
    g[1] = vb.y / db - va.y / da;
    g[2] = vb.z / db - va.z / da;
    return (db - da) - meas_m[i];
  };
  const Position3D init = opt.init.value_or(detail::centroid(anchors));
  return detail::gauss_newton_multi(prob, init, anchors, opt);
}

/// Trilateration on ranges d_i = c * RTT_i / 2.
inline PositionEstimate solve_rtt(std::span<const RangeObservation> obs,
                                  const SolveOptions& opt = {}) {
  const std::size_t need = opt.mode_2d ? 3 : 4;
  if (obs.size() < need) {
    throw std::invalid_argument("solve_rtt: under-determined system");
  }
  std::vector<Position3D> anchors;
  double msq = 0.0;
  for (const auto& o : obs) {
    anchors.push_back(o.anchor);
    msq += o.range_m * o.range_m;
  }
  detail::GnProblem prob;
  prob.count = obs.size();
  prob.measurement_rms_m = std::sqrt(msq / static_cast<double>(obs.size()));
  prob.eval = [&obs](std::size_t i, const Position3D& p, double g[3]) {
    const Position3D v = p - obs[i].anchor;
    const double d = std::max(v.norm(), 1e-12);
    g[0] = v.x / d;
    g[1] = v.y / d;
    g[2] = v.z / d;
    return d - obs[i].range_m;
  };
  const Position3D init = opt.init.value_or(detail::centroid(anchors));
  return detail::gauss_newton_multi(prob, init, anchors, opt);
}

/// Least-squares intersection of bearing lines (2D) or direction rays (3D).
/// The system is linear; parallel bearings make it singular.
inline PositionEstimate solve_aoa(std::span<const BearingObservation> obs,
                                  const SolveOptions& opt = {}) {
  if (obs.size() < 2) {
    throw std::invalid_argument("solve_aoa: need at least two bearings");
  }
  PositionEstimate est;
  if (opt.mode_2d) {
    // normal-form line constraints n.(p - a) = 0 with n perpendicular to the
    // bearing direction
    double a00 = 0, a01 = 0, a11 = 0, b0 = 0, b1 = 0;
    for (const auto& o : obs) {
      const double az = deg2rad(o.azimuth_deg);
      const double nx = -std::sin(az);
      const double ny = std::cos(az);
      const double rhs = nx * o.anchor.x + ny * o.anchor.y;
      a00 += nx * nx;
      a01 += nx * ny;
      a11 += ny * ny;
      b0 += nx * rhs;
      b1 += ny * rhs;
    }
    const double det = a00 * a11 - a01 * a01;
    if (std::abs(det) <= 1e-12 * std::max(a00, a11)) {
      throw std::domain_error("solve_aoa: parallel bearings, singular system");
    }
    est.position.x = (b0 * a11 - a01 * b1) / det;
    est.position.y = (a00 * b1 - a01 * b0) / det;
    est.position.z = opt.fixed_z;
    double f = 0.0;
    for (const auto& o : obs) {
      const double az = deg2rad(o.azimuth_deg);
      const double nx = -std::sin(az);
      const double ny = std::cos(az);
      const double r = nx * (est.position.x - o.anchor.x) +
                       ny * (est.position.y - o.anchor.y);
      f += r * r;
    }
    est.residual_norm = std::sqrt(f);
    est.iterations = 1;
    est.converged = true;
    return est;
  }
  // 3D: minimize sum || (I - u u') (p - a) ||^2
  double A[3][3] = {{0}};
  double b[3] = {0};
  for (const auto& o : obs) {
    if (!o.zenith_deg.has_value()) {
      throw std::invalid_argument("solve_aoa: 3D mode needs zenith angles");
    }
    const Position3D u =
        detail::unit_from_angles(o.azimuth_deg, *o.zenith_deg);
    const double uu[3] = {u.x, u.y, u.z};
    const double av[3] = {o.anchor.x, o.anchor.y, o.anchor.z};
    for (int r = 0; r < 3; ++r) {
      for (int c2 = 0; c2 < 3; ++c2) {
        const double m = (r == c2 ? 1.0 : 0.0) - uu[r] * uu[c2];
        A[r][c2] += m;
        b[r] += m * av[c2];
      }
    }
  }
  const double det = A[0][0] * (A[1][1] * A[2][2] - A[1][2] * A[2][1]) -
                     A[0][1] * (A[1][0] * A[2][2] - A[1][2] * A[2][0]) +
                     A[0][2] * (A[1][0] * A[2][1] - A[1][1] * A[2][0]);
  if (std::abs(det) <= 1e-12) {
    throw std::domain_error("solve_aoa: parallel bearings, singular system");
  }
  est.position.x = (b[0] * (A[1][1] * A[2][2] - A[1][2] * A[2][1]) -
                    A[0][1] * (b[1] * A[2][2] - A[1][2] * b[2]) +
                    A[0][2] * (b[1] * A[2][1] - A[1][1] * b[2])) / det;
  est.position.y = (A[0][0] * (b[1] * A[2][2] - A[1][2] * b[2]) -
                    b[0] * (A[1][0] * A[2][2] - A[1][2] * A[2][0]) +
                    A[0][2] * (A[1][0] * b[2] - b[1] * A[2][0])) / det;
  est.position.z = (A[0][0] * (A[1][1] * b[2] - b[1] * A[2][1]) -
                    A[0][1] * (A[1][0] * b[2] - b[1] * A[2][0]) +
                    b[0] * (A[1][0] * A[2][1] - A[1][1] * A[2][0])) / det;
  double f = 0.0;
  for (const auto& o : obs) {
    const Position3D u = detail::unit_from_angles(o.azimuth_deg, *o.zenith_deg);
    const Position3D d = est.position - o.anchor;
    const double along = dot(d, u);
    const Position3D perp = d - along * u;
    f += dot(perp, perp);
  }
  est.residual_norm = std::sqrt(f);
  est.iterations = 1;
  est.converged = true;
  return est;
}

}  // namespace nrpos
