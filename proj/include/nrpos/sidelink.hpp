#pragma once
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "nrpos/measurements.hpp"
#include "nrpos/scenario.hpp"
#include "nrpos/solvers.hpp"

namespace nrpos {

// Sidelink positioning: SL-TDOA (DL-like and UL-like), SL-RTT with the
// double-sided drift compensation, SL-AoA with LCS->GCS translation, and the
// SL-specific reporting rules (sync source, ARP identity, sample counts).

enum class CoverageState { InCoverage, Partial, OutOfCoverage };

struct SLMeasurementReport {
  std::variant<TimingMeasurement, AngleMeasurement> measurement;
  std::string sync_source_id;
  std::string arp_id;
  int sample_count = 1;
  int bandwidth_prb = 0;
  bool excluded = false;        // e.g. unknown sync source
  std::string exclusion_reason;
};

/// The sidelink slice of a scenario as the LMF sees it: which UEs anchor,
/// which UE is located, who synchronizes to what, and what the LMF knows
/// about the sync sources' time offsets.
struct SLScenarioView {
  std::string target;
  std::vector<std::string> anchors;
  std::map<std::string, std::string> ue_sync_source;
  std::map<std::string, double> sync_source_offset_s;  // LMF knowledge
  std::map<std::string, CoverageState> coverage;
  int sl_prs_bandwidth_prb = 52;
};

/// Samples mandated per SL PRS measurement: one above 48 PRB, four in the
/// 24..48 PRB range (48 itself takes the four-sample branch), unsupported
/// below 24.
inline int required_samples(int bandwidth_prb) {
  if (bandwidth_prb < 24) {
    throw ValidationError(
        "required_samples: SL PRS bandwidth below 24 PRB is unsupported");
  }
  return bandwidth_prb > 48 ? 1 : 4;
}

/// Collect the sidelink nodes of a scenario into a view. Sync-source offsets
/// are derived from the member nodes' clock offsets (which must agree within
/// a source).
inline SLScenarioView make_sl_view(const Scenario& sc,
                                   int sl_prs_bandwidth_prb = 52) {
  SLScenarioView view;
  view.sl_prs_bandwidth_prb = sl_prs_bandwidth_prb;
  for (const auto& n : sc.nodes()) {
    if (n.kind == NodeKind::SlAnchorUe) {
      view.anchors.push_back(n.node_id);
    } else if (n.kind == NodeKind::SlTargetUe) {
      if (!view.target.empty()) {
        throw ValidationError("make_sl_view: more than one SL target UE");
      }
      view.target = n.node_id;
    } else {
      continue;
    }
    view.ue_sync_source[n.node_id] = n.sync_source;
    view.coverage[n.node_id] = CoverageState::InCoverage;
    if (!n.sync_source.empty()) {
      auto [it, inserted] =
          view.sync_source_offset_s.emplace(n.sync_source, n.clock_offset_s);
      if (!inserted && it->second != n.clock_offset_s) {
        throw ValidationError(
            "make_sl_view: nodes on sync source '" + n.sync_source +
            "' disagree on its clock offset");
      }
    }
  }
  if (view.target.empty()) {
    throw ValidationError("make_sl_view: scenario has no SL target UE");
  }
  return view;
}

namespace detail {

inline SLMeasurementReport wrap_report(const SLScenarioView& view,
                                       const Scenario& sc,
                                       std::string_view measuring_ue,
                                       TimingMeasurement m) {
  SLMeasurementReport rep;
  rep.arp_id = m.arp_id.empty()
                   ? sc.node(measuring_ue).panels.front().arp_id
                   : m.arp_id;
  auto it = view.ue_sync_source.find(std::string(measuring_ue));
  rep.sync_source_id = it != view.ue_sync_source.end() ? it->second : "";
  rep.bandwidth_prb = view.sl_prs_bandwidth_prb;
  rep.sample_count = required_samples(view.sl_prs_bandwidth_prb);
  if (rep.sync_source_id.empty()) {
    rep.excluded = true;
    rep.exclusion_reason = "unknown synchronization source";
    rep.sync_source_id = "unknown";
  }
  rep.measurement = std::move(m);
  return rep;
}

}  // namespace detail

struct SlTdoaResult {
  std::vector<SLMeasurementReport> reports;
  PositionEstimate estimate;
  int target_transmissions = 0;  // SL PRS resources spent by the target
  int anchor_transmissions = 0;
};

/// DL-like SL-TDOA: anchors transmit SL PRS, the target measures SL RSTD
/// against a reference anchor. Sync-source time errors enter the RSTDs; with
/// `compensate_sync` the LMF removes them from its source-offset knowledge.
inline SlTdoaResult sl_tdoa_dl_like(const SLScenarioView& view,
                                    const Scenario& sc,
                                    std::string_view ref_anchor,
                                    double noise_sigma_s,
                                    std::uint64_t noise_salt = 0,
                                    bool compensate_sync = true,
                                    const SolveOptions& opt = {}) {
  const std::size_t need = opt.mode_2d ? 3 : 4;
  if (view.anchors.size() < need) {
    throw std::invalid_argument("sl_tdoa_dl_like: insufficient anchors");
  }
  SlTdoaResult out;
  const Node& ref = sc.node(ref_anchor);
  std::vector<TdoaObservation> obs;
  for (const auto& anchor : view.anchors) {
    if (anchor == ref_anchor) continue;
    const Node& a = sc.node(anchor);
    // target-side RSTD between the two anchor downlinks; anchor sync offsets
    // ride along exactly like TRP offsets do
    TimingMeasurement m = measure_rstd(sc, view.target, ref_anchor, anchor,
                                       noise_sigma_s, noise_salt);
    SLMeasurementReport rep = detail::wrap_report(view, sc, view.target, m);
    TdoaObservation o;
    o.ref_anchor = ref.position;
    o.other_anchor = a.position;
    o.rstd_s = m.value_s;
    if (compensate_sync) {
      const auto& so = view.sync_source_offset_s;
      auto ia = so.find(view.ue_sync_source.count(anchor)
                            ? view.ue_sync_source.at(anchor)
                            : "");
      auto ir = so.find(view.ue_sync_source.count(std::string(ref_anchor))
                            ? view.ue_sync_source.at(std::string(ref_anchor))
                            : "");
      if (ia != so.end() && ir != so.end()) {
        o.sync_offset_s = ia->second - ir->second;
      }
    }
    obs.push_back(o);
    out.reports.push_back(std::move(rep));
  }
  out.anchor_transmissions = static_cast<int>(view.anchors.size());
  out.target_transmissions = 0;
  out.estimate = solve_tdoa(obs, opt);
  return out;
}

/// UL-like SL-TDOA: one SL PRS transmission from the target, SL RTOA measured
/// at every anchor. Anchors with an unknown sync source are flagged and
/// excluded from the solution.
inline SlTdoaResult sl_tdoa_ul_like(const SLScenarioView& view,
                                    const Scenario& sc, double noise_sigma_s,
                                    std::uint64_t noise_salt = 0,
                                    bool compensate_sync = true,
                                    const SolveOptions& opt = {}) {
  const std::size_t need = opt.mode_2d ? 3 : 4;
  SlTdoaResult out;
  out.target_transmissions = 1;  // a single SL PRS serves every anchor
  out.anchor_transmissions = 0;

  struct AnchorRtoa {
    Position3D position;
    double rtoa_s;
    double sync_offset_s;
  };
  std::vector<AnchorRtoa> usable;
  for (const auto& anchor : view.anchors) {
    const Node& a = sc.node(anchor);
    TimingMeasurement m =
        measure_rtoa(sc, anchor, view.target, noise_sigma_s, noise_salt);
    SLMeasurementReport rep = detail::wrap_report(view, sc, anchor, m);
    if (!rep.excluded) {
      double sync = 0.0;
      if (compensate_sync) {
        auto it = view.sync_source_offset_s.find(rep.sync_source_id);
        if (it != view.sync_source_offset_s.end()) sync = it->second;
      }
      usable.push_back({a.position, m.value_s, sync});
    }
    out.reports.push_back(std::move(rep));
  }
  if (usable.size() < need) {
    throw std::invalid_argument(
        "sl_tdoa_ul_like: insufficient usable anchors");
  }
  // difference against the first usable anchor cancels the target's clock;
  // what remains of the anchors' sync offsets is removed when known
  std::vector<TdoaObservation> obs;
  for (std::size_t i = 1; i < usable.size(); ++i) {
    TdoaObservation o;
    o.ref_anchor = usable[0].position;
    o.other_anchor = usable[i].position;
    o.rstd_s = usable[i].rtoa_s - usable[0].rtoa_s;
    // RTOA_k - RTOA_ref = (d_k - d_ref)/c - (offset_k - offset_ref)
    o.sync_offset_s = -(usable[i].sync_offset_s - usable[0].sync_offset_s);
    obs.push_back(o);
  }
  out.estimate = solve_tdoa(obs, opt);
  return out;
}

struct SlRttResult {
  double distance_m = 0.0;
  bool double_sided = false;
  std::vector<SLMeasurementReport> reports;
};

/// SL-RTT ranging between an anchor and the target.
///
/// drift_ppm is the relative clock-rate offset between the two UEs (split
/// symmetrically, +/- drift/2). Single-sided: one exchange with the given
/// turnaround, d = c*(rxtx_a + rxtx_b)/2; the reply interval scaled by the
/// drift leaks into the estimate at first order. Double-sided: a second,
/// symmetric exchange with the roles swapped; the standard round/reply
/// combination cancels the first-order term, leaving a residual that is
/// second order in the drift. Internals run in long double so that the
/// second-order term stays above rounding noise.
inline SlRttResult sl_rtt(const SLScenarioView& view, const Scenario& sc,
                          std::string_view anchor, std::string_view target,
                          bool double_sided, double drift_ppm,
                          double turnaround_s = 1e-3,
                          double noise_sigma_s = 0.0,
                          std::uint64_t noise_salt = 0) {
  const Node& a = sc.node(anchor);
  const Node& t = sc.node(target);
  const long double tau =
      static_cast<long double>(distance(a.position, t.position)) /
      static_cast<long double>(kSpeedOfLight);
  const long double reply = static_cast<long double>(turnaround_s);
  const long double half_drift =
      static_cast<long double>(drift_ppm) * 1e-6L / 2.0L;
  const long double rate_a = 1.0L - half_drift;  // anchor clock rate
  const long double rate_t = 1.0L + half_drift;  // target clock rate

  long double noise1 = 0.0L, noise2 = 0.0L, noise3 = 0.0L, noise4 = 0.0L;
  if (noise_sigma_s > 0.0) {
    auto stream = derive_stream(sc.seed(), "sl_rtt", noise_salt);
    noise1 = stream.gaussian(noise_sigma_s);
    noise2 = stream.gaussian(noise_sigma_s);
    noise3 = stream.gaussian(noise_sigma_s);
    noise4 = stream.gaussian(noise_sigma_s);
  }

  // exchange 1, anchor initiates: anchor's round and target's (negative) delay
  const long double rxtx_a1 = (2.0L * tau + reply) * rate_a + noise1;
  const long double rxtx_t1 = -reply * rate_t + noise2;

  long double tof;
  if (!double_sided) {
    tof = (rxtx_a1 + rxtx_t1) / 2.0L;
  } else {
    // exchange 2, target initiates
    const long double rxtx_t2 = (2.0L * tau + reply) * rate_t + noise3;
    const long double rxtx_a2 = -reply * rate_a + noise4;
    const long double ra = rxtx_a1, rb = rxtx_t2;
    const long double da = -rxtx_a2, db = -rxtx_t1;
    tof = (ra * rb - da * db) / (ra + rb + da + db);
  }

  SlRttResult out;
  out.double_sided = double_sided;
  out.distance_m =
      static_cast<double>(tof * static_cast<long double>(kSpeedOfLight));

  auto emit = [&](std::string_view node, std::string_view peer, double value) {
    TimingMeasurement m;
    m.kind = TimingKind::UeRxTx;
    m.value_s = value;
    m.ref_node = std::string(node);
    m.other_node = std::string(peer);
    m.arp_id = sc.node(node).panels.front().arp_id;
    out.reports.push_back(detail::wrap_report(view, sc, node, std::move(m)));
  };
  emit(anchor, target, static_cast<double>(rxtx_a1));
  emit(target, anchor, static_cast<double>(rxtx_t1));
  if (double_sided) {
    emit(target, anchor,
         static_cast<double>((2.0L * tau + reply) * rate_t + noise3));
    emit(anchor, target, static_cast<double>(-reply * rate_a + noise4));
  }
  return out;
}

struct SlAoaResult {
  std::vector<SLMeasurementReport> reports;
  PositionEstimate estimate;
};

/// SL-AoA: anchors measure the target's SL PRS arrival angles, optionally in
/// their local coordinate systems; LCS reports are translated to the GCS via
/// the per-anchor orientation before triangulation.
inline SlAoaResult sl_aoa(const SLScenarioView& view, const Scenario& sc,
                          AngleFrame frame,
                          const std::map<std::string, PanelOrientation>&
                              orientations,
                          double noise_sigma_deg = 0.0,
                          std::uint64_t noise_salt = 0,
                          const SolveOptions& opt = {}) {
  if (view.anchors.size() < 2) {
    throw std::invalid_argument("sl_aoa: need at least two anchors");
  }
  SlAoaResult out;
  std::vector<BearingObservation> obs;
  for (const auto& anchor : view.anchors) {
    PanelOrientation orient;
    if (frame == AngleFrame::Lcs) {
      auto it = orientations.find(anchor);
      if (it == orientations.end()) {
        throw ValidationError("sl_aoa: LCS report from '" + anchor +
                              "' has no orientation");
      }
      orient = it->second;
    }
    AngleMeasurement am = measure_aoa(sc, anchor, view.target, frame, orient,
                                      noise_sigma_deg, noise_salt);
    AngleMeasurement gcs = frame == AngleFrame::Lcs ? lcs_to_gcs(am, orient) : am;

    SLMeasurementReport rep;
    rep.arp_id = am.arp_id;
    auto si = view.ue_sync_source.find(anchor);
    rep.sync_source_id =
        (si != view.ue_sync_source.end() && !si->second.empty()) ? si->second
                                                                 : "unknown";
    rep.bandwidth_prb = view.sl_prs_bandwidth_prb;
    rep.sample_count = required_samples(view.sl_prs_bandwidth_prb);
    rep.measurement = am;
    out.reports.push_back(std::move(rep));

    BearingObservation o;
    o.anchor = sc.node(anchor).position;
    o.azimuth_deg = gcs.azimuth_deg;
    if (!opt.mode_2d) o.zenith_deg = gcs.zenith_deg;
    obs.push_back(o);
  }
  out.estimate = solve_aoa(obs, opt);
  return out;
}

/// Per-ARP measurement: one report per panel of the target, each taken from
/// the panel's true position (node reference plus panel offset). Reports are
/// angle measurements of the peer as seen from each panel.
inline std::vector<SLMeasurementReport> measure_per_arp(
    const SLScenarioView& view, const Scenario& sc, std::string_view peer,
    double noise_sigma_deg = 0.0, std::uint64_t noise_salt = 0) {
  const Node& target = sc.node(view.target);
  const Node& p = sc.node(peer);
  std::vector<SLMeasurementReport> out;
  for (const auto& panel : target.panels) {
    const Position3D panel_pos = target.position + panel.offset;
    Position3D dir = p.position - panel_pos;
    const double r = dir.norm();
    if (r == 0.0) {
      throw ValidationError("measure_per_arp: peer coincides with a panel");
    }
    dir = (1.0 / r) * dir;
    AngleMeasurement am;
    detail::angles_from_unit(dir, am.azimuth_deg, am.zenith_deg);
    if (noise_sigma_deg > 0.0) {
      auto stream = derive_stream(
          sc.seed(), "per_arp",
          detail::phase_noise_key("arp", view.target, panel.arp_id, peer, 0.0) ^
              noise_salt);
      am.azimuth_deg =
          wrap_deg_0_360(am.azimuth_deg + stream.gaussian(noise_sigma_deg));
    }
    am.frame = AngleFrame::Gcs;
    am.arp_id = panel.arp_id;

    SLMeasurementReport rep;
    rep.arp_id = panel.arp_id;
    auto si = view.ue_sync_source.find(view.target);
    rep.sync_source_id =
        (si != view.ue_sync_source.end() && !si->second.empty()) ? si->second
                                                                 : "unknown";
    rep.bandwidth_prb = view.sl_prs_bandwidth_prb;
    rep.sample_count = required_samples(view.sl_prs_bandwidth_prb);
    rep.measurement = am;
    out.push_back(std::move(rep));
  }
  return out;
}

}  // namespace nrpos
