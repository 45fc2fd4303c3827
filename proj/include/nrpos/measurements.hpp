#pragma once
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "nrpos/angles.hpp"
#include "nrpos/carrier_phase.hpp"
#include "nrpos/geometry.hpp"
#include "nrpos/rng.hpp"
#include "nrpos/scenario.hpp"

namespace nrpos {

// Timing and angle observables.
//
// Clock convention: a node's clock reads true_time - clock_offset_s, so a
// transmission scheduled at nominal time 0 leaves at true time +offset and a
// received event is timestamped true_time - offset. This yields
//   RTOA = d/c + offset_tx - offset_rx
// and makes Rx-Tx differences immune to the node's own offset.

enum class TimingKind { Rstd, Rtoa, UeRxTx, GnbRxTx };
enum class HopProvenance { NotApplicable, SingleHop, MultiHop };

inline std::string to_string(HopProvenance hp) {
  switch (hp) {
    case HopProvenance::NotApplicable: return "n/a";
    case HopProvenance::SingleHop: return "single_hop";
    case HopProvenance::MultiHop: return "multi_hop";
  }
  return "?";
}

struct TimingMeasurement {
  TimingKind kind = TimingKind::Rstd;
  double value_s = 0.0;
  std::string ref_node;    // reference transmitter (RSTD) / measuring node
  std::string other_node;  // second transmitter (RSTD) / peer
  std::string arp_id;
  double time_s = 0.0;
  HopProvenance hop_provenance = HopProvenance::NotApplicable;
  bool aggregated = false;
  std::vector<std::string> pfl_set;
};

struct PanelOrientation {
  double bearing_deg = 0.0;   // alpha, about z
  double downtilt_deg = 0.0;  // beta, about the rotated y
  double slant_deg = 0.0;     // gamma, about the twice-rotated x
};

enum class AngleFrame { Gcs, Lcs };

struct AngleMeasurement {
  double azimuth_deg = 0.0;  // [0,360), counter-clockwise from +x
  double zenith_deg = 0.0;   // [0,180], from +z toward the x-y plane
  AngleFrame frame = AngleFrame::Gcs;
  PanelOrientation orientation;  // meaningful when frame == Lcs
  std::string arp_id;
};

/// NR basic time unit, exactly 1/(480000*4096) s (~0.5086 ns).
inline constexpr double kTcSeconds = 1.0 / (480000.0 * 4096.0);

/// Reporting granularity 2^k * Tc with k in {-6..-1}.
struct ReportingGrid {
  int k = -1;
  double step_s() const {
    if (k < -6 || k > -1) {
      throw std::invalid_argument("ReportingGrid: k must be in {-6..-1}");
    }
    return std::ldexp(kTcSeconds, k);
  }
};

/// Round to the nearest grid step, ties away from zero.
inline double quantize_timing(double value_s, const ReportingGrid& grid) {
  const double step = grid.step_s();
  return std::round(value_s / step) * step;
}

namespace detail {

inline double timing_noise(const Scenario& sc, std::string_view what,
                           std::string_view a, std::string_view b,
                           double time_s, double sigma_s, std::uint64_t salt) {
  if (sigma_s <= 0.0) return 0.0;
  auto stream = derive_stream(sc.seed(), what,
                              phase_noise_key(what, a, b, "", time_s) ^ salt);
  return stream.gaussian(sigma_s);
}

}  // namespace detail

/// RSTD at the UE between two TRP downlinks:
/// (d_other - d_ref)/c + (offset_other - offset_ref) + noise.
/// The UE's own clock cancels in the difference.
inline TimingMeasurement measure_rstd(const Scenario& sc, std::string_view ue,
                                      std::string_view trp_ref,
                                      std::string_view trp_other,
                                      double noise_sigma_s,
                                      std::uint64_t noise_salt = 0,
                                      double time_s = 0.0) {
  const Node& u = sc.node(ue);
  const Node& r = sc.node(trp_ref);
  const Node& o = sc.node(trp_other);
  TimingMeasurement m;
  m.kind = TimingKind::Rstd;
  m.value_s = (distance(o.position, u.position) -
               distance(r.position, u.position)) / kSpeedOfLight +
              (o.clock_offset_s - r.clock_offset_s) +
              detail::timing_noise(sc, "rstd", trp_ref, trp_other, time_s,
                                   noise_sigma_s, noise_salt);
  m.ref_node = std::string(trp_ref);
  m.other_node = std::string(trp_other);
  m.arp_id = u.panels.front().arp_id;
  m.time_s = time_s;
  return m;
}

/// UL relative time of arrival at a TRP: d/c + offset_tx - offset_rx + noise.
inline TimingMeasurement measure_rtoa(const Scenario& sc, std::string_view trp,
                                      std::string_view ue,
                                      double noise_sigma_s,
                                      std::uint64_t noise_salt = 0,
                                      double time_s = 0.0) {
  const Node& rx = sc.node(trp);
  const Node& tx = sc.node(ue);
  TimingMeasurement m;
  m.kind = TimingKind::Rtoa;
  m.value_s = distance(tx.position, rx.position) / kSpeedOfLight +
              tx.clock_offset_s - rx.clock_offset_s +
              detail::timing_noise(sc, "rtoa", trp, ue, time_s, noise_sigma_s,
                                   noise_salt);
  m.ref_node = std::string(trp);
  m.other_node = std::string(ue);
  m.arp_id = rx.panels.front().arp_id;
  m.time_s = time_s;
  return m;
}

/// Rx-Tx time difference at `node` against `peer`, both transmitting at their
/// own nominal zero: d/c + (offset_peer - offset_node) + noise. The node's
/// own offset cancels between its two timestamps.
inline TimingMeasurement measure_rxtx_diff(const Scenario& sc,
                                           std::string_view node,
                                           std::string_view peer,
                                           double noise_sigma_s,
                                           std::uint64_t noise_salt = 0,
                                           double time_s = 0.0) {
  const Node& n = sc.node(node);
  const Node& p = sc.node(peer);
  TimingMeasurement m;
  m.kind = n.kind == NodeKind::Trp ? TimingKind::GnbRxTx : TimingKind::UeRxTx;
  m.value_s = distance(n.position, p.position) / kSpeedOfLight +
              (p.clock_offset_s - n.clock_offset_s) +
              detail::timing_noise(sc, "rxtx", node, peer, time_s,
                                   noise_sigma_s, noise_salt);
  m.ref_node = std::string(node);
  m.other_node = std::string(peer);
  m.arp_id = n.panels.front().arp_id;
  m.time_s = time_s;
  return m;
}

/// RTT = sum of the two sides' Rx-Tx differences = 2d/c when drift-free;
/// clock offsets cancel in the sum.
inline double rtt_from_pair(const TimingMeasurement& ue_rxtx,
                            const TimingMeasurement& gnb_rxtx) {
  return ue_rxtx.value_s + gnb_rxtx.value_s;
}

namespace detail {

/// Composite rotation R(alpha,beta,gamma) = Rz(alpha)*Ry(beta)*Rx(gamma),
/// the z-y-x intrinsic composition of bearing, downtilt and slant.
inline std::array<double, 9> rotation_matrix(const PanelOrientation& o) {
  const double ca = std::cos(deg2rad(o.bearing_deg));
  const double sa = std::sin(deg2rad(o.bearing_deg));
  const double cb = std::cos(deg2rad(o.downtilt_deg));
  const double sb = std::sin(deg2rad(o.downtilt_deg));
  const double cg = std::cos(deg2rad(o.slant_deg));
  const double sg = std::sin(deg2rad(o.slant_deg));
  return {ca * cb, ca * sb * sg - sa * cg, ca * sb * cg + sa * sg,
          sa * cb, sa * sb * sg + ca * cg, sa * sb * cg - ca * sg,
          -sb,     cb * sg,                cb * cg};
}

inline Position3D rotate(const std::array<double, 9>& r, const Position3D& v) {
  return {r[0] * v.x + r[1] * v.y + r[2] * v.z,
          r[3] * v.x + r[4] * v.y + r[5] * v.z,
          r[6] * v.x + r[7] * v.y + r[8] * v.z};
}

inline Position3D rotate_transposed(const std::array<double, 9>& r,
                                    const Position3D& v) {
  return {r[0] * v.x + r[3] * v.y + r[6] * v.z,
          r[1] * v.x + r[4] * v.y + r[7] * v.z,
          r[2] * v.x + r[5] * v.y + r[8] * v.z};
}

inline Position3D unit_from_angles(double azimuth_deg, double zenith_deg) {
  const double az = deg2rad(azimuth_deg);
  const double ze = deg2rad(zenith_deg);
  return {std::sin(ze) * std::cos(az), std::sin(ze) * std::sin(az),
          std::cos(ze)};
}

inline void angles_from_unit(const Position3D& u, double& azimuth_deg,
                             double& zenith_deg) {
  azimuth_deg = wrap_deg_0_360(rad2deg(std::atan2(u.y, u.x)));
  zenith_deg = rad2deg(std::acos(std::clamp(u.z, -1.0, 1.0)));
}

}  // namespace detail

/// Angle of arrival at rx_node of the signal from tx_node. The azimuth is
/// measured counter-clockwise from the x-axis of the requested frame, the
/// vertical angle from its z-axis.
inline AngleMeasurement measure_aoa(const Scenario& sc,
                                    std::string_view rx_node,
                                    std::string_view tx_node, AngleFrame frame,
                                    const PanelOrientation& orientation = {},
                                    double noise_sigma_deg = 0.0,
                                    std::uint64_t noise_salt = 0) {
  const Node& rx = sc.node(rx_node);
  const Node& tx = sc.node(tx_node);
  Position3D dir = tx.position - rx.position;
  const double r = dir.norm();
  if (r == 0.0) {
    throw ValidationError("measure_aoa: coincident nodes, direction undefined");
  }
  dir = (1.0 / r) * dir;
  if (frame == AngleFrame::Lcs) {
    dir = detail::rotate_transposed(detail::rotation_matrix(orientation), dir);
  }
  AngleMeasurement a;
  detail::angles_from_unit(dir, a.azimuth_deg, a.zenith_deg);
  if (noise_sigma_deg > 0.0) {
    auto stream = derive_stream(
        sc.seed(), "aoa",
        detail::phase_noise_key("aoa", rx_node, tx_node, "", 0.0) ^ noise_salt);
    a.azimuth_deg = wrap_deg_0_360(a.azimuth_deg +
                                   stream.gaussian(noise_sigma_deg));
    a.zenith_deg = std::clamp(a.zenith_deg + stream.gaussian(noise_sigma_deg),
                              0.0, 180.0);
  }
  a.frame = frame;
  a.orientation = orientation;
  a.arp_id = rx.panels.front().arp_id;
  return a;
}

/// Rotate an LCS measurement into the GCS using the panel orientation.
inline AngleMeasurement lcs_to_gcs(const AngleMeasurement& in,
                                   const PanelOrientation& orientation) {
  if (in.frame != AngleFrame::Lcs) {
    throw ValidationError("lcs_to_gcs: input frame must be LCS");
  }
  const Position3D u = detail::unit_from_angles(in.azimuth_deg, in.zenith_deg);
  const Position3D g = detail::rotate(detail::rotation_matrix(orientation), u);
  AngleMeasurement out = in;
  detail::angles_from_unit(g, out.azimuth_deg, out.zenith_deg);
  out.frame = AngleFrame::Gcs;
  return out;
}

/// Inverse transform (transposed rotation), GCS back into the panel's LCS.
inline AngleMeasurement gcs_to_lcs(const AngleMeasurement& in,
                                   const PanelOrientation& orientation) {
  if (in.frame != AngleFrame::Gcs) {
    throw ValidationError("gcs_to_lcs: input frame must be GCS");
  }
  const Position3D u = detail::unit_from_angles(in.azimuth_deg, in.zenith_deg);
  const Position3D l =
      detail::rotate_transposed(detail::rotation_matrix(orientation), u);
  AngleMeasurement out = in;
  detail::angles_from_unit(l, out.azimuth_deg, out.zenith_deg);
  out.frame = AngleFrame::Lcs;
  out.orientation = orientation;
  return out;
}

}  // namespace nrpos
