#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nrpos/angles.hpp"
#include "nrpos/geometry.hpp"
#include "nrpos/rng.hpp"
#include "nrpos/scenario.hpp"

namespace nrpos {

// Carrier-phase observables and differencing.
//
// Sign conventions, used consistently in both link directions:
//   measured = geometric phase + rx bias of the receiving panel
//                               - tx bias of the transmitting panel
// For the downlink that reads  phi_DL = phi_hat + phi_r - phi_t  with phi_r
// attached to the UE and phi_t to the gNB. For the uplink the same physical
// rule gives  phi_UL = phi_hat - phi_r + phi_t  when the symbols keep their
// node attachment (phi_r = UE-side bias, now transmitting; phi_t = gNB-side
// bias, now receiving), which is what makes the RTT-like sum collapse to
// 2*phi_hat when each node runs Tx and Rx from one oscillator.

enum class PhaseRange { Rscp, Rscpd };  // [0,360) and [-180,180)

inline double wrap_into(PhaseRange range, double deg) {
  return range == PhaseRange::Rscp ? wrap_deg_0_360(deg) : wrap_deg_pm180(deg);
}

struct PhaseObservation {
  double value_deg = 0.0;
  PhaseRange range = PhaseRange::Rscp;
  std::string tx_node, tx_arp;
  std::string rx_node, rx_arp;
  // set only for RSCPD values (identity of the reference transmitter)
  std::string ref_tx_node, ref_tx_arp;
  std::string pfl_id;
  double time_s = 0.0;
};

/// Phase accrued over the propagation distance, degrees in [0,360):
/// (d mod lambda) / lambda * 360.
inline double geometric_phase(const Scenario& sc, std::string_view tx_node,
                              std::string_view rx_node, std::string_view pfl) {
  const double d = distance(sc.node(tx_node).position, sc.node(rx_node).position);
  const double lambda = sc.wavelength_m(pfl);
  return wrap_deg_0_360(std::fmod(d, lambda) / lambda * 360.0);
}

namespace detail {

inline std::uint64_t phase_noise_key(std::string_view what,
                                     std::string_view a, std::string_view b,
                                     std::string_view pfl, double time_s) {
  std::string label;
  label.reserve(64);
  label.append(what).push_back('|');
  label.append(a).push_back('|');
  label.append(b).push_back('|');
  label.append(pfl).push_back('|');
  // exact time participates via its bit pattern
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(time_s));
  std::memcpy(&bits, &time_s, sizeof(bits));
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(bits));
  label.append(hex);
  return fnv1a64(label);
}

}  // namespace detail

/// DL RSCP at the UE: wrap_[0,360)(phi_hat + phi_r(ue) - phi_t(trp) + noise).
/// Deterministic for fixed (scenario seed, identifiers, time, salt).
inline PhaseObservation measure_dl_rscp(const Scenario& sc,
                                        std::string_view trp,
                                        std::string_view trp_arp,
                                        std::string_view ue,
                                        std::string_view ue_arp,
                                        std::string_view pfl, double time_s,
                                        double noise_sigma_deg,
                                        std::uint64_t noise_salt = 0) {
  const Node& tx = sc.node(trp);
  const Node& rx = sc.node(ue);
  if (tx.kind != NodeKind::Trp) {
    throw ValidationError("measure_dl_rscp: transmitter must be a TRP");
  }
  if (rx.kind != NodeKind::Ue && rx.kind != NodeKind::Pru) {
    throw ValidationError("measure_dl_rscp: receiver must be a UE or PRU");
  }
  const double phi_hat = geometric_phase(sc, trp, ue, pfl);
  const double phi_r = sample_phase_bias(rx, ue_arp, Side::Rx, time_s);
  const double phi_t = sample_phase_bias(tx, trp_arp, Side::Tx, time_s);
  double noise = 0.0;
  if (noise_sigma_deg > 0.0) {
    auto stream = derive_stream(
        sc.seed(), "dl_rscp",
        detail::phase_noise_key("dl", trp, ue, pfl, time_s) ^ noise_salt);
    noise = stream.gaussian(noise_sigma_deg);
  }
  PhaseObservation obs;
  obs.value_deg = wrap_deg_0_360(phi_hat + phi_r - phi_t + noise);
  obs.range = PhaseRange::Rscp;
  obs.tx_node = std::string(trp);
  obs.tx_arp = std::string(trp_arp);
  obs.rx_node = std::string(ue);
  obs.rx_arp = std::string(ue_arp);
  obs.pfl_id = std::string(pfl);
  obs.time_s = time_s;
  return obs;
}

/// UL RSCP at the TRP: wrap_[0,360)(phi_hat - phi_t(ue) + phi_r(trp) + noise),
/// i.e. the same receiver-plus / transmitter-minus rule with the roles swapped.
inline PhaseObservation measure_ul_rscp(const Scenario& sc,
                                        std::string_view ue,
                                        std::string_view ue_arp,
                                        std::string_view trp,
                                        std::string_view trp_arp,
                                        std::string_view pfl, double time_s,
                                        double noise_sigma_deg,
                                        std::uint64_t noise_salt = 0) {
  const Node& tx = sc.node(ue);
  const Node& rx = sc.node(trp);
  if (rx.kind != NodeKind::Trp) {
    throw ValidationError("measure_ul_rscp: receiver must be a TRP");
  }
  const double phi_hat = geometric_phase(sc, ue, trp, pfl);
  const double phi_t_ue = sample_phase_bias(tx, ue_arp, Side::Tx, time_s);
  const double phi_r_trp = sample_phase_bias(rx, trp_arp, Side::Rx, time_s);
  double noise = 0.0;
  if (noise_sigma_deg > 0.0) {
    auto stream = derive_stream(
        sc.seed(), "ul_rscp",
        detail::phase_noise_key("ul", ue, trp, pfl, time_s) ^ noise_salt);
    noise = stream.gaussian(noise_sigma_deg);
  }
  PhaseObservation obs;
  obs.value_deg = wrap_deg_0_360(phi_hat - phi_t_ue + phi_r_trp + noise);
  obs.range = PhaseRange::Rscp;
  obs.tx_node = std::string(ue);
  obs.tx_arp = std::string(ue_arp);
  obs.rx_node = std::string(trp);
  obs.rx_arp = std::string(trp_arp);
  obs.pfl_id = std::string(pfl);
  obs.time_s = time_s;
  return obs;
}

/// RSCPD = wrap_[-180,180)(other - ref). Requires one receiver, one Rx panel,
/// one frequency layer and one measurement time; under those conditions the
/// Rx bias is common to both inputs and subtracts out exactly.
inline PhaseObservation rscpd(const PhaseObservation& ref,
                              const PhaseObservation& other) {
  if (ref.range != PhaseRange::Rscp || other.range != PhaseRange::Rscp) {
    throw ValidationError("rscpd: inputs must be RSCP observations");
  }
  if (ref.rx_node != other.rx_node || ref.rx_arp != other.rx_arp) {
    throw ValidationError("rscpd: inputs must share the Rx node and antenna");
  }
  if (ref.pfl_id != other.pfl_id) {
    throw ValidationError("rscpd: inputs must share the frequency layer");
  }
  if (ref.time_s != other.time_s) {
    throw ValidationError(
        "rscpd: measurement times differ; phase drift would not cancel");
  }
  PhaseObservation out;
  out.value_deg = wrap_deg_pm180(other.value_deg - ref.value_deg);
  out.range = PhaseRange::Rscpd;
  out.tx_node = other.tx_node;
  out.tx_arp = other.tx_arp;
  out.ref_tx_node = ref.tx_node;
  out.ref_tx_arp = ref.tx_arp;
  out.rx_node = ref.rx_node;
  out.rx_arp = ref.rx_arp;
  out.pfl_id = ref.pfl_id;
  out.time_s = ref.time_s;
  return out;
}

/// Double difference of a UE RSCPD against a PRU RSCPD over the same TRP
/// pair, same Tx antennas and same time window. The Tx biases cancel exactly
/// and the result equals the geometry-only double difference, [-180,180).
inline double double_difference(const PhaseObservation& ue_rscpd,
                                const PhaseObservation& pru_rscpd) {
  if (ue_rscpd.range != PhaseRange::Rscpd ||
      pru_rscpd.range != PhaseRange::Rscpd) {
    throw ValidationError("double_difference: inputs must be RSCPD values");
  }
  if (ue_rscpd.tx_node != pru_rscpd.tx_node ||
      ue_rscpd.ref_tx_node != pru_rscpd.ref_tx_node) {
    throw ValidationError("double_difference: TRP pair mismatch");
  }
  if (ue_rscpd.tx_arp != pru_rscpd.tx_arp ||
      ue_rscpd.ref_tx_arp != pru_rscpd.ref_tx_arp) {
    throw ValidationError("double_difference: Tx antenna mismatch");
  }
  if (ue_rscpd.pfl_id != pru_rscpd.pfl_id) {
    throw ValidationError("double_difference: frequency layer mismatch");
  }
  if (ue_rscpd.time_s != pru_rscpd.time_s) {
    throw ValidationError("double_difference: time window mismatch");
  }
  return wrap_deg_pm180(ue_rscpd.value_deg - pru_rscpd.value_deg);
}

/// RTT-like combination: wrap_[0,360)(DL + UL) = wrap(2*phi_hat) when the
/// scenario declares oscillator sharing. Halving to phi_hat (and the implied
/// lambda/2 ambiguity) is the solver's job.
inline double rtt_like_combine(const Scenario& sc, const PhaseObservation& dl,
                               const PhaseObservation& ul) {
  if (!sc.same_oscillator()) {
    throw ValidationError(
        "rtt_like_combine: scenario does not declare same_oscillator; the "
        "common-bias contract does not hold (it is not mandated)");
  }
  if (dl.tx_node != ul.rx_node || dl.rx_node != ul.tx_node) {
    throw ValidationError("rtt_like_combine: observations are not one UE/TRP pair");
  }
  if (dl.tx_arp != ul.rx_arp || dl.rx_arp != ul.tx_arp) {
    throw ValidationError("rtt_like_combine: antenna panels differ between directions");
  }
  if (dl.pfl_id != ul.pfl_id) {
    throw ValidationError("rtt_like_combine: frequency layer mismatch");
  }
  if (dl.time_s != ul.time_s) {
    throw ValidationError("rtt_like_combine: measurement times differ");
  }
  return wrap_deg_0_360(dl.value_deg + ul.value_deg);
}

/// Report quantization: nearest 0.1 degree, ties away from zero, then wrapped
/// back into the declared range.
inline double quantize_phase(double value_deg, PhaseRange range) {
  if (!std::isfinite(value_deg)) {
    throw std::invalid_argument("quantize_phase: value must be finite");
  }
  const double q = std::round(value_deg * 10.0) / 10.0;  // ties away from zero
  return wrap_into(range, q);
}

// --------------------------------------------------------------------------
// Position solving from carrier-phase observables.

/// One double-differenced equation: the model term is
///   g(p) = [d(other,p) - d(ref,p)] - pru_single_diff_m
/// and the measurement pins g(p) modulo one wavelength.
struct DoubleDifferenceEquation {
  Position3D ref_trp;
  Position3D other_trp;
  double pru_single_diff_m = 0.0;  // known d(other,PRU) - d(ref,PRU)
  double dd_deg = 0.0;             // measured double difference, [-180,180)
};

/// One RTT-like equation: combined = wrap(2*phi_hat) pins d(trp,p) modulo
/// lambda/2.
struct RttLikeRangeEquation {
  Position3D trp;
  double combined_deg = 0.0;  // [0,360)
};

struct CarrierPhaseSolveOptions {
  double residual_threshold_deg = 10.0;  // RMS; above this -> ambiguity failure
  bool mode_2d = true;
  double fixed_z = 0.0;       // height used in 2D mode
  double grid_step_cycles = 0.2;
  int max_iterations = 50;
  std::size_t max_candidates = 200000;  // safety cap on distinct ambiguities
};

struct CarrierPhaseSolution {
  Position3D position;
  std::vector<long> ambiguities;  // integer cycles per equation
  double residual_deg = 0.0;      // post-fit RMS, degrees of one cycle
  int iterations = 0;
  bool fixed = false;             // false = ambiguity failure, not silent
  std::string failure_reason;
};

namespace detail {

/// Internal representation: g_i(p) must equal period*(N_i + frac_i).
struct CycleEquation {
  enum class Kind { DoubleDifference, AbsoluteRange };
  Kind kind = Kind::DoubleDifference;
  Position3D a, b;      // DD: a=ref TRP, b=other TRP; range: a=TRP
  double constant_m = 0.0;
  double frac_cycles = 0.0;  // measured fractional part, cycles

  double model_m(const Position3D& p) const {
    if (kind == Kind::DoubleDifference) {
      return distance(b, p) - distance(a, p) - constant_m;
    }
    return distance(a, p);
  }
  void gradient(const Position3D& p, double g[3]) const {
    if (kind == Kind::DoubleDifference) {
      const Position3D ub = p - b, ua = p - a;
      const double db = ub.norm(), da = ua.norm();
      g[0] = ub.x / db - ua.x / da;
      g[1] = ub.y / db - ua.y / da;
      g[2] = ub.z / db - ua.z / da;
    } else {
      const Position3D ua = p - a;
      const double da = ua.norm();
      g[0] = ua.x / da;
      g[1] = ua.y / da;
      g[2] = ua.z / da;
    }
  }
};

struct CandidateFit {
  Position3D position;
  double rms_cycles = std::numeric_limits<double>::infinity();
  int iterations = 0;
};

/// Damped Gauss-Newton on fixed-ambiguity residuals
/// r_i = g_i(p) - period*(N_i + frac_i).
inline CandidateFit refine_candidate(const std::vector<CycleEquation>& eqs,
                                     const std::vector<long>& amb,
                                     double period_m, Position3D start,
                                     const CarrierPhaseSolveOptions& opt) {
  const std::size_t m = eqs.size();
  const int dim = opt.mode_2d ? 2 : 3;
  Position3D p = start;
  if (opt.mode_2d) p.z = opt.fixed_z;

  auto sum_sq = [&](const Position3D& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double r = eqs[i].model_m(q) - period_m * (amb[i] + eqs[i].frac_cycles);
      s += r * r;
    }
    return s;
  };

  double f = sum_sq(p);
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    double jtj[3][3] = {{0}};
    double jtr[3] = {0};
    for (std::size_t i = 0; i < m; ++i) {
      double g[3];
      eqs[i].gradient(p, g);
      const double r = eqs[i].model_m(p) - period_m * (amb[i] + eqs[i].frac_cycles);
      for (int a2 = 0; a2 < dim; ++a2) {
        jtr[a2] += g[a2] * r;
        for (int b2 = 0; b2 < dim; ++b2) jtj[a2][b2] += g[a2] * g[b2];
      }
    }
    // solve jtj * step = -jtr (2x2 or 3x3)
    double step[3] = {0, 0, 0};
    if (dim == 2) {
      const double det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
      if (std::abs(det) < 1e-14) break;
      step[0] = (-jtr[0] * jtj[1][1] + jtr[1] * jtj[0][1]) / det;
      step[1] = (-jtj[0][0] * jtr[1] + jtj[1][0] * jtr[0]) / det;
    } else {
      double a00 = jtj[0][0], a01 = jtj[0][1], a02 = jtj[0][2];
      double a11 = jtj[1][1], a12 = jtj[1][2], a22 = jtj[2][2];
      const double det = a00 * (a11 * a22 - a12 * a12) -
                         a01 * (a01 * a22 - a12 * a02) +
                         a02 * (a01 * a12 - a11 * a02);
      if (std::abs(det) < 1e-18) break;
      const double b0 = -jtr[0], b1 = -jtr[1], b2 = -jtr[2];
      step[0] = (b0 * (a11 * a22 - a12 * a12) - a01 * (b1 * a22 - a12 * b2) +
                 a02 * (b1 * a12 - a11 * b2)) / det;
      step[1] = (a00 * (b1 * a22 - a12 * b2) - b0 * (a01 * a22 - a02 * a12) +
                 a02 * (a01 * b2 - b1 * a02)) / det;
      step[2] = (a00 * (a11 * b2 - b1 * a12) - a01 * (a01 * b2 - b1 * a02) +
                 b0 * (a01 * a12 - a11 * a02)) / det;
    }
    double scale = 1.0;
    Position3D next = p;
    double fn = f;
    bool improved = false;
    for (int h = 0; h < 20; ++h) {
      Position3D cand{p.x + scale * step[0], p.y + scale * step[1],
                      p.z + (dim == 3 ? scale * step[2] : 0.0)};
      const double fc = sum_sq(cand);
      if (fc < f) {
        next = cand;
        fn = fc;
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) break;
    const double moved = std::hypot(next.x - p.x, next.y - p.y, next.z - p.z);
    p = next;
    f = fn;
    if (moved < 1e-12) break;
  }
  CandidateFit fit;
  fit.position = p;
  fit.rms_cycles = std::sqrt(sum_sq(p) / static_cast<double>(m)) / period_m;
  fit.iterations = it;
  return fit;
}

/// Bounded search: a position grid over the coarse trust region (half-width
/// search_radius_cycles * period) enumerates every ambiguity vector any
/// in-region position can imply; each distinct vector is then refined with
/// Gauss-Newton and the best post-fit residual wins.
inline CarrierPhaseSolution solve_cycles(const Position3D& coarse,
                                         const std::vector<CycleEquation>& eqs,
                                         double period_m,
                                         double search_radius_cycles,
                                         const CarrierPhaseSolveOptions& opt) {
  const std::size_t m = eqs.size();
  const std::size_t need = (opt.mode_2d ? 3 : 4);
  if (m < need) {
    throw std::invalid_argument(
        "solve_carrier_phase: under-determined (need >=" +
        std::to_string(need) + " equations)");
  }
  CarrierPhaseSolution out;
  out.position = coarse;
  if (opt.mode_2d) out.position.z = opt.fixed_z;

  const double radius_m = search_radius_cycles * period_m;
  const double step_m = std::max(opt.grid_step_cycles, 0.02) * period_m;
  const long half = std::lround(std::ceil(radius_m / step_m));

  // map: ambiguity vector -> best (score, seed point)
  std::map<std::vector<long>, std::pair<double, Position3D>> candidates;
  std::vector<long> amb(m);
  const long half_z = opt.mode_2d ? 0 : half;
  for (long iz = -half_z; iz <= half_z; ++iz) {
    for (long iy = -half; iy <= half; ++iy) {
      for (long ix = -half; ix <= half; ++ix) {
        Position3D p{coarse.x + ix * step_m, coarse.y + iy * step_m,
                     opt.mode_2d ? opt.fixed_z : coarse.z + iz * step_m};
        double score = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double cycles = eqs[i].model_m(p) / period_m - eqs[i].frac_cycles;
          const double n = std::round(cycles);
          amb[i] = static_cast<long>(n);
          const double r = (cycles - n) * period_m;
          score += r * r;
        }
        auto it = candidates.find(amb);
        if (it == candidates.end()) {
          if (candidates.size() < opt.max_candidates) {
            candidates.emplace(amb, std::make_pair(score, p));
          }
        } else if (score < it->second.first) {
          it->second = {score, p};
        }
      }
    }
  }

  const double bound_m = radius_m + step_m;  // refined fixes must stay in-region
  CandidateFit best;
  std::vector<long> best_amb;
  for (const auto& [vec, seed] : candidates) {
    CandidateFit fit = refine_candidate(eqs, vec, period_m, seed.second, opt);
    const double off = std::hypot(fit.position.x - coarse.x,
                                  fit.position.y - coarse.y,
                                  opt.mode_2d ? 0.0 : fit.position.z - coarse.z);
    if (off > bound_m) continue;
    if (fit.rms_cycles < best.rms_cycles) {
      best = fit;
      best_amb = vec;
    }
  }

  const double best_rms_deg = best.rms_cycles * 360.0;
  if (best_amb.empty() || best_rms_deg > opt.residual_threshold_deg) {
    out.fixed = false;
    out.residual_deg = best_amb.empty() ? std::numeric_limits<double>::infinity()
                                        : best_rms_deg;
    out.failure_reason =
        "no ambiguity candidate with post-fit residual below threshold";
    return out;
  }
  out.position = best.position;
  out.ambiguities = best_amb;
  out.residual_deg = best_rms_deg;
  out.iterations = best.iterations;
  out.fixed = true;
  return out;
}

}  // namespace detail

/// Resolve integer ambiguities and refine the position from double-differenced
/// carrier phases. The coarse fix must lie within search_radius_cycles
/// wavelengths of the truth; an ambiguity failure is reported, never silent.
inline CarrierPhaseSolution solve_carrier_phase(
    const Position3D& coarse, std::span<const DoubleDifferenceEquation> dds,
    double wavelength_m, double search_radius_cycles = 3.0,
    const CarrierPhaseSolveOptions& opt = {}) {
  std::vector<detail::CycleEquation> eqs;
  eqs.reserve(dds.size());
  for (const auto& dd : dds) {
    detail::CycleEquation e;
    e.kind = detail::CycleEquation::Kind::DoubleDifference;
    e.a = dd.ref_trp;
    e.b = dd.other_trp;
    e.constant_m = dd.pru_single_diff_m;
    e.frac_cycles = dd.dd_deg / 360.0;
    eqs.push_back(e);
  }
  return detail::solve_cycles(coarse, eqs, wavelength_m, search_radius_cycles,
                              opt);
}

/// Same machinery for RTT-like combined phases: each TRP contributes an
/// absolute range known modulo lambda/2 (combined = wrap(2*phi_hat)).
inline CarrierPhaseSolution solve_carrier_phase_rtt_like(
    const Position3D& coarse, std::span<const RttLikeRangeEquation> ranges,
    double wavelength_m, double search_radius_cycles = 3.0,
    const CarrierPhaseSolveOptions& opt = {}) {
  std::vector<detail::CycleEquation> eqs;
  eqs.reserve(ranges.size());
  for (const auto& r : ranges) {
    detail::CycleEquation e;
    e.kind = detail::CycleEquation::Kind::AbsoluteRange;
    e.a = r.trp;
    e.frac_cycles = r.combined_deg / 360.0;  // fraction of a half wavelength
    eqs.push_back(e);
  }
  return detail::solve_cycles(coarse, eqs, 0.5 * wavelength_m,
                              search_radius_cycles, opt);
}

}  // namespace nrpos
