#pragma once
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nrpos/aggregation.hpp"
#include "nrpos/carrier_phase.hpp"
#include "nrpos/channel.hpp"
#include "nrpos/measurements.hpp"
#include "nrpos/resource_grid.hpp"
#include "nrpos/scenario.hpp"
#include "nrpos/sidelink.hpp"
#include "nrpos/solvers.hpp"
#include "nrpos/stitching.hpp"
#include "nrpos/zadoff_chu.hpp"

namespace nrpos {

// Monte-Carlo experiment orchestration: a scenario, a technique, a trial
// count and noise knobs in; per-trial result rows and summary statistics out.
// Trials draw from per-trial derived random streams, so a run is a pure
// function of (config, seed).

enum class Technique {
  DlTdoa,
  UlTdoa,
  Rtt,
  Aoa,
  CarrierPhaseDd,
  CarrierPhaseRttLike,
  FhTdoa,
  BwAggTdoa,
  SlTdoaDl,
  SlTdoaUl,
  SlRtt,
  SlAoa,
};

inline const std::map<std::string, Technique>& technique_names() {
  static const std::map<std::string, Technique> names = {
      {"dl_tdoa", Technique::DlTdoa},
      {"ul_tdoa", Technique::UlTdoa},
      {"rtt", Technique::Rtt},
      {"aoa", Technique::Aoa},
      {"carrier_phase_dd", Technique::CarrierPhaseDd},
      {"carrier_phase_rtt_like", Technique::CarrierPhaseRttLike},
      {"fh_tdoa", Technique::FhTdoa},
      {"bw_agg_tdoa", Technique::BwAggTdoa},
      {"sl_tdoa_dl", Technique::SlTdoaDl},
      {"sl_tdoa_ul", Technique::SlTdoaUl},
      {"sl_rtt", Technique::SlRtt},
      {"sl_aoa", Technique::SlAoa},
  };
  return names;
}

inline Technique parse_technique(const std::string& name) {
  auto it = technique_names().find(name);
  if (it == technique_names().end()) {
    throw ParseError("unknown technique: " + name);
  }
  return it->second;
}

inline std::string to_string(Technique t) {
  for (const auto& [name, tech] : technique_names()) {
    if (tech == t) return name;
  }
  return "?";
}

struct NoiseConfig {
  double phase_sigma_deg = 0.0;
  double timing_sigma_s = 0.0;
  double angle_sigma_deg = 0.0;
  std::optional<double> snr_db;
};

struct ExperimentConfig {
  nlohmann::json scenario_doc;
  Technique technique = Technique::DlTdoa;
  int trials = 1;
  NoiseConfig noise;
  bool quantize = false;
  bool quantize_before_differencing = false;
  int reporting_k = -3;

  std::string pfl;          // default: first declared frequency layer
  std::string target;       // default: first UE / SL target
  std::string pru;          // default: first PRU
  std::string ref;          // default: first TRP / first SL anchor

  bool mode_2d = true;
  std::optional<double> fixed_z;  // default: target's true height

  double search_radius_cycles = 3.0;
  double residual_threshold_deg = 10.0;

  HopPlan hop_plan = make_uniform_hop_plan(104, 24, 4);
  bool single_hop = false;
  int prs_comb = 2;
  int prs_symbols = 2;
  int scs_khz = 30;
  int oversampling = 16;

  int num_ccs = 3;
  int cc_prb = 52;
  bool phase_continuous = true;

  double turnaround_s = 1e-3;
  double drift_ppm = 0.0;
  bool double_sided = true;
  bool compensate_sync = true;
  int sl_bandwidth_prb = 52;

  std::optional<std::uint64_t> seed_override;
  std::string out_dir;
};

/// Load an experiment description. `scenario` may be a path (resolved
/// relative to base_dir) or an inline scenario object under `scenario_doc`.
inline ExperimentConfig load_experiment_config(
    const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
  try {
    ExperimentConfig cfg;
    if (doc.contains("scenario_doc")) {
      cfg.scenario_doc = doc.at("scenario_doc");
    } else if (doc.contains("scenario")) {
      const auto rel = std::filesystem::path(doc.at("scenario").get<std::string>());
      const auto path = rel.is_absolute() ? rel : base_dir / rel;
      std::ifstream f(path);
      if (!f) {
        throw std::runtime_error("cannot open scenario file: " + path.string());
      }
      cfg.scenario_doc = nlohmann::json::parse(f);
    } else {
      throw ParseError("experiment config needs 'scenario' or 'scenario_doc'");
    }
    cfg.technique = parse_technique(doc.at("technique").get<std::string>());
    cfg.trials = doc.value("trials", 1);
    if (cfg.trials < 1) throw ParseError("trials must be >= 1");
    if (doc.contains("noise")) {
      const auto& n = doc.at("noise");
      cfg.noise.phase_sigma_deg = n.value("phase_sigma_deg", 0.0);
      cfg.noise.timing_sigma_s = n.value("timing_sigma_s", 0.0);
      cfg.noise.angle_sigma_deg = n.value("angle_sigma_deg", 0.0);
      if (n.contains("snr_db")) cfg.noise.snr_db = n.at("snr_db").get<double>();
    }
    cfg.quantize = doc.value("quantize", false);
    cfg.quantize_before_differencing =
        doc.value("quantize_before_differencing", false);
    cfg.reporting_k = doc.value("reporting_k", -3);
    cfg.pfl = doc.value("pfl", std::string{});
    cfg.target = doc.value("target", std::string{});
    cfg.pru = doc.value("pru", std::string{});
    cfg.ref = doc.value("ref", std::string{});
    cfg.mode_2d = doc.value("mode_2d", true);
    if (doc.contains("fixed_z")) cfg.fixed_z = doc.at("fixed_z").get<double>();
    cfg.search_radius_cycles = doc.value("search_radius_cycles", 3.0);
    cfg.residual_threshold_deg = doc.value("residual_threshold_deg", 10.0);
    if (doc.contains("hop")) {
      const auto& h = doc.at("hop");
      cfg.hop_plan = make_uniform_hop_plan(h.value("total_prb", 104),
                                           h.value("hop_prb", 24),
                                           h.value("overlap_prb", 4));
    }
    cfg.single_hop = doc.value("single_hop", false);
    cfg.prs_comb = doc.value("prs_comb", 2);
    cfg.prs_symbols = doc.value("prs_symbols", 2);
    cfg.scs_khz = doc.value("scs_khz", 30);
    cfg.oversampling = doc.value("oversampling", 16);
    cfg.num_ccs = doc.value("num_ccs", 3);
    cfg.cc_prb = doc.value("cc_prb", 52);
    cfg.phase_continuous = doc.value("phase_continuous", true);
    cfg.turnaround_s = doc.value("turnaround_s", 1e-3);
    cfg.drift_ppm = doc.value("drift_ppm", 0.0);
    cfg.double_sided = doc.value("double_sided", true);
    cfg.compensate_sync = doc.value("compensate_sync", true);
    cfg.sl_bandwidth_prb = doc.value("sl_bandwidth_prb", 52);
    if (doc.contains("seed")) {
      cfg.seed_override = doc.at("seed").get<std::uint64_t>();
    }
    cfg.out_dir = doc.value("out", std::string{});
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("experiment config: ") + e.what());
  }
}

struct ResultRow {
  int trial = 0;
  Position3D truth;
  Position3D estimate;
  double horizontal_error_m = 0.0;
  double vertical_error_m = 0.0;
  bool converged = false;
  bool aggregated = false;
  HopProvenance hop_provenance = HopProvenance::NotApplicable;
  std::string arp_id;
  std::string sync_source_id;
};

struct SummaryStats {
  double rmse_m = 0.0;
  double mean_m = 0.0;
  double p50_m = 0.0;
  double p67_m = 0.0;
  double p90_m = 0.0;
  double p95_m = 0.0;
  double convergence_rate = 0.0;
  int trials = 0;
};

/// Nearest-rank percentiles plus RMSE/mean over horizontal errors.
inline SummaryStats summarize(std::span<const ResultRow> rows) {
  if (rows.empty()) {
    throw std::invalid_argument("summarize: no rows");
  }
  std::vector<double> errs;
  errs.reserve(rows.size());
  double sum = 0.0, sumsq = 0.0;
  int conv = 0;
  for (const auto& r : rows) {
    errs.push_back(r.horizontal_error_m);
    sum += r.horizontal_error_m;
    sumsq += r.horizontal_error_m * r.horizontal_error_m;
    conv += r.converged ? 1 : 0;
  }
  std::sort(errs.begin(), errs.end());
  const auto nearest_rank = [&errs](double pct) {
    const std::size_t n = errs.size();
    std::size_t rank = static_cast<std::size_t>(
        std::ceil(pct / 100.0 * static_cast<double>(n)));
    if (rank < 1) rank = 1;
    if (rank > n) rank = n;
    return errs[rank - 1];
  };
  SummaryStats s;
  s.trials = static_cast<int>(rows.size());
  s.mean_m = sum / static_cast<double>(rows.size());
  s.rmse_m = std::sqrt(sumsq / static_cast<double>(rows.size()));
  s.p50_m = nearest_rank(50.0);
  s.p67_m = nearest_rank(67.0);
  s.p90_m = nearest_rank(90.0);
  s.p95_m = nearest_rank(95.0);
  s.convergence_rate = static_cast<double>(conv) / static_cast<double>(rows.size());
  return s;
}

inline nlohmann::json summary_to_json(const SummaryStats& s) {
  return {{"rmse_m", s.rmse_m},       {"mean_m", s.mean_m},
          {"p50_m", s.p50_m},         {"p67_m", s.p67_m},
          {"p90_m", s.p90_m},         {"p95_m", s.p95_m},
          {"convergence_rate", s.convergence_rate},
          {"trials", s.trials}};
}

namespace detail {

struct ExperimentContext {
  const ExperimentConfig& cfg;
  Scenario scenario;
  std::string pfl;
  std::string target;
  std::string pru;
  std::string ref;
  std::vector<std::string> trps;
  double fixed_z = 0.0;
};

inline ExperimentContext make_context(const ExperimentConfig& cfg) {
  nlohmann::json doc = cfg.scenario_doc;
  if (cfg.seed_override.has_value()) (doc)["seed"] = *cfg.seed_override;
  ExperimentContext ctx{cfg, build_scenario(doc)};
  const Scenario& sc = ctx.scenario;
  ctx.pfl = cfg.pfl.empty() ? sc.carrier_frequencies().begin()->first : cfg.pfl;

  const bool sl = cfg.technique == Technique::SlTdoaDl ||
                  cfg.technique == Technique::SlTdoaUl ||
                  cfg.technique == Technique::SlRtt ||
                  cfg.technique == Technique::SlAoa;
  auto first_of = [&sc](NodeKind k) -> std::string {
    for (const auto& n : sc.nodes()) {
      if (n.kind == k) return n.node_id;
    }
    return {};
  };
  ctx.target = !cfg.target.empty()
                   ? cfg.target
                   : first_of(sl ? NodeKind::SlTargetUe : NodeKind::Ue);
  if (ctx.target.empty()) {
    throw ValidationError("experiment: scenario has no target node");
  }
  ctx.pru = !cfg.pru.empty() ? cfg.pru : first_of(NodeKind::Pru);
  ctx.trps = sc.node_ids_of_kind(NodeKind::Trp);
  if (sl) {
    ctx.ref = !cfg.ref.empty() ? cfg.ref : first_of(NodeKind::SlAnchorUe);
  } else {
    ctx.ref = !cfg.ref.empty() ? cfg.ref : (ctx.trps.empty() ? "" : ctx.trps[0]);
  }
  ctx.fixed_z = cfg.fixed_z.value_or(sc.node(ctx.target).position.z);
  return ctx;
}

inline ResultRow finish_row(int trial, const Position3D& truth,
                            const Position3D& est, bool converged) {
  ResultRow row;
  row.trial = trial;
  row.truth = truth;
  row.estimate = est;
  row.horizontal_error_m = std::hypot(est.x - truth.x, est.y - truth.y);
  row.vertical_error_m = std::abs(est.z - truth.z);
  row.converged = converged;
  return row;
}

inline SolveOptions solver_options(const ExperimentContext& ctx) {
  SolveOptions opt;
  opt.mode_2d = ctx.cfg.mode_2d;
  opt.fixed_z = ctx.fixed_z;
  return opt;
}

inline double maybe_quantize_timing(const ExperimentContext& ctx, double v) {
  if (!ctx.cfg.quantize) return v;
  return quantize_timing(v, ReportingGrid{ctx.cfg.reporting_k});
}

/// Coarse fix from downlink RSTDs; shared by dl_tdoa and the carrier-phase
/// pipeline.
inline PositionEstimate coarse_dl_tdoa(const ExperimentContext& ctx,
                                       int trial) {
  const Scenario& sc = ctx.scenario;
  std::vector<TdoaObservation> obs;
  for (const auto& trp : ctx.trps) {
    if (trp == ctx.ref) continue;
    TimingMeasurement m =
        measure_rstd(sc, ctx.target, ctx.ref, trp, ctx.cfg.noise.timing_sigma_s,
                     static_cast<std::uint64_t>(trial));
    TdoaObservation o;
    o.ref_anchor = sc.node(ctx.ref).position;
    o.other_anchor = sc.node(trp).position;
    o.rstd_s = maybe_quantize_timing(ctx, m.value_s);
    // the LMF knows the network synchronization state
    o.sync_offset_s =
        sc.node(trp).clock_offset_s - sc.node(ctx.ref).clock_offset_s;
    obs.push_back(o);
  }
  return solve_tdoa(obs, solver_options(ctx));
}

inline ResultRow run_dl_tdoa_trial(const ExperimentContext& ctx, int trial) {
  const Position3D truth = ctx.scenario.node(ctx.target).position;
  PositionEstimate est = coarse_dl_tdoa(ctx, trial);
  return finish_row(trial, truth, est.position, est.converged);
}

inline ResultRow run_ul_tdoa_trial(const ExperimentContext& ctx, int trial) {
  const Scenario& sc = ctx.scenario;
  const Position3D truth = sc.node(ctx.target).position;
  std::map<std::string, double> rtoa;
  for (const auto& trp : ctx.trps) {
    TimingMeasurement m = measure_rtoa(sc, trp, ctx.target,
                                       ctx.cfg.noise.timing_sigma_s,
                                       static_cast<std::uint64_t>(trial));
    rtoa[trp] = maybe_quantize_timing(ctx, m.value_s);
  }
  std::vector<TdoaObservation> obs;
  for (const auto& trp : ctx.trps) {
    if (trp == ctx.ref) continue;
    TdoaObservation o;
    o.ref_anchor = sc.node(ctx.ref).position;
    o.other_anchor = sc.node(trp).position;
    o.rstd_s = rtoa[trp] - rtoa[ctx.ref];
    // RTOA difference carries -(offset_other - offset_ref)
    o.sync_offset_s =
        -(sc.node(trp).clock_offset_s - sc.node(ctx.ref).clock_offset_s);
    obs.push_back(o);
  }
  PositionEstimate est = solve_tdoa(obs, solver_options(ctx));
  return finish_row(trial, truth, est.position, est.converged);
}

inline std::vector<RangeObservation> rtt_ranges(const ExperimentContext& ctx,
                                                int trial) {
  const Scenario& sc = ctx.scenario;
  std::vector<RangeObservation> obs;
  for (const auto& trp : ctx.trps) {
    TimingMeasurement ue = measure_rxtx_diff(sc, ctx.target, trp,
                                             ctx.cfg.noise.timing_sigma_s,
                                             static_cast<std::uint64_t>(trial));
    TimingMeasurement gnb = measure_rxtx_diff(sc, trp, ctx.target,
                                              ctx.cfg.noise.timing_sigma_s,
                                              static_cast<std::uint64_t>(trial) ^
                                                  0x5bd1e995ULL);
    const double rtt = maybe_quantize_timing(ctx, rtt_from_pair(ue, gnb));
    obs.push_back({sc.node(trp).position, kSpeedOfLight * rtt / 2.0});
  }
  return obs;
}

inline ResultRow run_rtt_trial(const ExperimentContext& ctx, int trial) {
  const Position3D truth = ctx.scenario.node(ctx.target).position;
  PositionEstimate est = solve_rtt(rtt_ranges(ctx, trial), solver_options(ctx));
  return finish_row(trial, truth, est.position, est.converged);
}

inline ResultRow run_aoa_trial(const ExperimentContext& ctx, int trial) {
  const Scenario& sc = ctx.scenario;
  const Position3D truth = sc.node(ctx.target).position;
  std::vector<BearingObservation> obs;
  for (const auto& trp : ctx.trps) {
    AngleMeasurement a =
        measure_aoa(sc, trp, ctx.target, AngleFrame::Gcs, {},
                    ctx.cfg.noise.angle_sigma_deg,
                    static_cast<std::uint64_t>(trial));
    BearingObservation o;
    o.anchor = sc.node(trp).position;
    o.azimuth_deg = a.azimuth_deg;
    if (!ctx.cfg.mode_2d) o.zenith_deg = a.zenith_deg;
    obs.push_back(o);
  }
  PositionEstimate est = solve_aoa(obs, solver_options(ctx));
  return finish_row(trial, truth, est.position, est.converged);
}

inline ResultRow run_carrier_phase_dd_trial(const ExperimentContext& ctx,
                                            int trial) {
  const Scenario& sc = ctx.scenario;
  const ExperimentConfig& cfg = ctx.cfg;
  const Position3D truth = sc.node(ctx.target).position;
  if (ctx.pru.empty()) {
    throw ValidationError("carrier_phase_dd: scenario has no PRU");
  }
  PositionEstimate coarse = coarse_dl_tdoa(ctx, trial);
  if (!coarse.converged) {
    return finish_row(trial, truth, coarse.position, false);
  }
  const auto salt = static_cast<std::uint64_t>(trial);
  const std::string ue_arp = sc.node(ctx.target).panels.front().arp_id;
  const std::string pru_arp = sc.node(ctx.pru).panels.front().arp_id;
  auto quant_raw = [&](PhaseObservation o) {
    if (cfg.quantize && cfg.quantize_before_differencing) {
      o.value_deg = quantize_phase(o.value_deg, o.range);
    }
    return o;
  };
  auto quant_reported = [&](PhaseObservation o) {
    if (cfg.quantize && !cfg.quantize_before_differencing) {
      o.value_deg = quantize_phase(o.value_deg, o.range);
    }
    return o;
  };
  const std::string ref_arp = sc.node(ctx.ref).panels.front().arp_id;
  PhaseObservation ue_ref = quant_raw(
      measure_dl_rscp(sc, ctx.ref, ref_arp, ctx.target, ue_arp, ctx.pfl, 0.0,
                      cfg.noise.phase_sigma_deg, salt));
  PhaseObservation pru_ref = quant_raw(
      measure_dl_rscp(sc, ctx.ref, ref_arp, ctx.pru, pru_arp, ctx.pfl, 0.0,
                      cfg.noise.phase_sigma_deg, salt));
  std::vector<DoubleDifferenceEquation> eqs;
  for (const auto& trp : ctx.trps) {
    if (trp == ctx.ref) continue;
    const std::string trp_arp = sc.node(trp).panels.front().arp_id;
    PhaseObservation ue_other = quant_raw(
        measure_dl_rscp(sc, trp, trp_arp, ctx.target, ue_arp, ctx.pfl, 0.0,
                        cfg.noise.phase_sigma_deg, salt));
    PhaseObservation pru_other = quant_raw(
        measure_dl_rscp(sc, trp, trp_arp, ctx.pru, pru_arp, ctx.pfl, 0.0,
                        cfg.noise.phase_sigma_deg, salt));
    PhaseObservation ue_d = quant_reported(rscpd(ue_ref, ue_other));
    PhaseObservation pru_d = quant_reported(rscpd(pru_ref, pru_other));
    DoubleDifferenceEquation eq;
    eq.ref_trp = sc.node(ctx.ref).position;
    eq.other_trp = sc.node(trp).position;
    eq.pru_single_diff_m = distance(eq.other_trp, sc.node(ctx.pru).position) -
                           distance(eq.ref_trp, sc.node(ctx.pru).position);
    eq.dd_deg = double_difference(ue_d, pru_d);
    eqs.push_back(eq);
  }
  CarrierPhaseSolveOptions copt;
  copt.mode_2d = cfg.mode_2d;
  copt.fixed_z = ctx.fixed_z;
  copt.residual_threshold_deg = cfg.residual_threshold_deg;
  CarrierPhaseSolution sol =
      solve_carrier_phase(coarse.position, eqs, sc.wavelength_m(ctx.pfl),
                          cfg.search_radius_cycles, copt);
  return finish_row(trial, truth, sol.fixed ? sol.position : coarse.position,
                    sol.fixed);
}

inline ResultRow run_carrier_phase_rtt_like_trial(const ExperimentContext& ctx,
                                                  int trial) {
  const Scenario& sc = ctx.scenario;
  const ExperimentConfig& cfg = ctx.cfg;
  const Position3D truth = sc.node(ctx.target).position;
  PositionEstimate coarse = solve_rtt(rtt_ranges(ctx, trial),
                                      solver_options(ctx));
  if (!coarse.converged) {
    return finish_row(trial, truth, coarse.position, false);
  }
  const auto salt = static_cast<std::uint64_t>(trial);
  const std::string ue_arp = sc.node(ctx.target).panels.front().arp_id;
  std::vector<RttLikeRangeEquation> eqs;
  for (const auto& trp : ctx.trps) {
    const std::string trp_arp = sc.node(trp).panels.front().arp_id;
    PhaseObservation dl =
        measure_dl_rscp(sc, trp, trp_arp, ctx.target, ue_arp, ctx.pfl, 0.0,
                        cfg.noise.phase_sigma_deg, salt);
    PhaseObservation ul =
        measure_ul_rscp(sc, ctx.target, ue_arp, trp, trp_arp, ctx.pfl, 0.0,
                        cfg.noise.phase_sigma_deg, salt);
    double combined = rtt_like_combine(sc, dl, ul);
    if (cfg.quantize) combined = quantize_phase(combined, PhaseRange::Rscp);
    eqs.push_back({sc.node(trp).position, combined});
  }
  CarrierPhaseSolveOptions copt;
  copt.mode_2d = cfg.mode_2d;
  copt.fixed_z = ctx.fixed_z;
  copt.residual_threshold_deg = cfg.residual_threshold_deg;
  CarrierPhaseSolution sol = solve_carrier_phase_rtt_like(
      coarse.position, eqs, sc.wavelength_m(ctx.pfl), cfg.search_radius_cycles,
      copt);
  return finish_row(trial, truth, sol.fixed ? sol.position : coarse.position,
                    sol.fixed);
}

/// Full-band reference symbols for the signal-layer techniques.
inline ChannelEstimate signal_reference(const ExperimentConfig& cfg,
                                        int bandwidth_prb, int start_prb,
                                        std::uint64_t seq_seed) {
  ResourceConfig rc;
  rc.comb_size = cfg.prs_comb;
  rc.num_symbols = std::max(cfg.prs_symbols, cfg.prs_comb);
  rc.bandwidth_prb = bandwidth_prb;
  rc.start_prb = start_prb;
  rc.subcarrier_spacing_khz = cfg.scs_khz;
  PrsGrid grid = generate_prs_grid(rc, seq_seed);
  auto combined = combine_staggered(grid);
  ChannelEstimate ref;
  ref.scs_hz = rc.scs_hz();
  for (int i = 0; i < rc.num_subcarriers(); ++i) {
    ref.subcarrier.push_back(rc.first_subcarrier() + i);
    ref.value.push_back(combined[i]);
  }
  return ref;
}

inline ChannelEstimate slice_band(const ChannelEstimate& full, int first_sc,
                                  int count) {
  ChannelEstimate out;
  out.scs_hz = full.scs_hz;
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (full.subcarrier[i] >= first_sc && full.subcarrier[i] < first_sc + count) {
      out.subcarrier.push_back(full.subcarrier[i]);
      out.value.push_back(full.value[i]);
    }
  }
  return out;
}

inline ResultRow run_fh_tdoa_trial(const ExperimentContext& ctx, int trial) {
  const Scenario& sc = ctx.scenario;
  const ExperimentConfig& cfg = ctx.cfg;
  const Position3D truth = sc.node(ctx.target).position;
  const HopPlan& plan = cfg.hop_plan;
  std::map<std::string, double> toa;
  int trp_index = 0;
  for (const auto& trp : ctx.trps) {
    const ChannelEstimate ref = signal_reference(
        cfg, plan.total_bandwidth_prb, 0,
        sc.seed() ^ detail::fnv1a64(trp));
    const double tau = distance(sc.node(trp).position, truth) / kSpeedOfLight +
                       sc.node(trp).clock_offset_s;
    auto phases = derive_stream(sc.seed(), "fh_phases",
                                (static_cast<std::uint64_t>(trial) << 8) ^
                                    static_cast<std::uint64_t>(trp_index));
    const double carrier_phase = phases.uniform(-kPi, kPi);
    std::vector<ChannelEstimate> est_hops;
    const int n_hops = cfg.single_hop ? 1 : plan.num_hops();
    for (int h = 0; h < n_hops; ++h) {
      const ChannelEstimate tx =
          slice_band(ref, plan.hop_order[h] * kSubcarriersPerPrb,
                     plan.hop_bandwidth_prb * kSubcarriersPerPrb);
      const double hop_phase = phases.uniform(-kPi, kPi);  // RF retuning
      const std::uint64_t noise_seed =
          sc.seed() ^ (static_cast<std::uint64_t>(trial) * 0x9E3779B97F4A7C15ULL) ^
          (static_cast<std::uint64_t>(trp_index) << 32) ^
          static_cast<std::uint64_t>(h);
      ChannelEstimate rx = apply_channel(tx, tau, carrier_phase, hop_phase,
                                         cfg.noise.snr_db, noise_seed);
      est_hops.push_back(estimate_channel(rx, tx));
    }
    double t;
    if (cfg.single_hop) {
      t = estimate_toa(est_hops[0], cfg.oversampling);
    } else {
      t = estimate_toa(stitch_hops(est_hops, plan), cfg.oversampling);
    }
    toa[trp] = t;
    ++trp_index;
  }
  std::vector<TdoaObservation> obs;
  for (const auto& trp : ctx.trps) {
    if (trp == ctx.ref) continue;
    TdoaObservation o;
    o.ref_anchor = sc.node(ctx.ref).position;
    o.other_anchor = sc.node(trp).position;
    o.rstd_s = maybe_quantize_timing(ctx, toa[trp] - toa[ctx.ref]);
    o.sync_offset_s =
        sc.node(trp).clock_offset_s - sc.node(ctx.ref).clock_offset_s;
    obs.push_back(o);
  }
  PositionEstimate est = solve_tdoa(obs, solver_options(ctx));
  ResultRow row = finish_row(trial, truth, est.position, est.converged);
  row.hop_provenance =
      cfg.single_hop ? HopProvenance::SingleHop : HopProvenance::MultiHop;
  return row;
}

inline ResultRow run_bw_agg_tdoa_trial(const ExperimentContext& ctx,
                                       int trial) {
  const Scenario& sc = ctx.scenario;
  const ExperimentConfig& cfg = ctx.cfg;
  const Position3D truth = sc.node(ctx.target).position;
  if (cfg.num_ccs < 1 || cfg.num_ccs > 3) {
    throw ValidationError("bw_agg_tdoa: num_ccs must be 1..3");
  }
  std::map<std::string, double> toa;
  int trp_index = 0;
  for (const auto& trp : ctx.trps) {
    const double tau = distance(sc.node(trp).position, truth) / kSpeedOfLight +
                       sc.node(trp).clock_offset_s;
    auto phases = derive_stream(sc.seed(), "agg_phases",
                                (static_cast<std::uint64_t>(trial) << 8) ^
                                    static_cast<std::uint64_t>(trp_index));
    const double continuous_phase = phases.uniform(-kPi, kPi);
    std::vector<ResourceConfig> members;
    std::vector<ChannelEstimate> estimates;
    for (int ccn = 0; ccn < cfg.num_ccs; ++ccn) {
      ResourceConfig rc;
      rc.comb_size = cfg.prs_comb;
      rc.num_symbols = std::max(cfg.prs_symbols, cfg.prs_comb);
      rc.bandwidth_prb = cfg.cc_prb;
      rc.start_prb = ccn * cfg.cc_prb;
      rc.subcarrier_spacing_khz = cfg.scs_khz;
      rc.pfl_or_cc_id = "cc" + std::to_string(ccn);
      rc.link_criteria = "agg";
      validate_resource_config(rc);
      members.push_back(rc);
      const ChannelEstimate tx = signal_reference(
          cfg, cfg.cc_prb, rc.start_prb,
          sc.seed() ^ detail::fnv1a64(trp) ^ static_cast<std::uint64_t>(ccn));
      // a single Tx chain keeps one carrier phase across linked resources;
      // otherwise each CC picks up its own
      const double cc_phase =
          cfg.phase_continuous ? continuous_phase : phases.uniform(-kPi, kPi);
      const std::uint64_t noise_seed =
          sc.seed() ^ (static_cast<std::uint64_t>(trial) * 0xD1B54A32D192ED03ULL) ^
          (static_cast<std::uint64_t>(trp_index) << 32) ^
          static_cast<std::uint64_t>(ccn);
      ChannelEstimate rx =
          apply_channel(tx, tau, cc_phase, 0.0, cfg.noise.snr_db, noise_seed);
      estimates.push_back(estimate_channel(rx, tx));
    }
    if (cfg.num_ccs >= 2) {
      auto linked = link_resources(members, "agg");
      if (!linked.has_value()) {
        throw ValidationError("bw_agg_tdoa: resources failed to link");
      }
    }
    AggregationResult agg =
        aggregate_linked(estimates, members, cfg.phase_continuous);
    toa[trp] = estimate_toa(agg.estimate, cfg.oversampling);
    ++trp_index;
  }
  std::vector<TdoaObservation> obs;
  for (const auto& trp : ctx.trps) {
    if (trp == ctx.ref) continue;
    TdoaObservation o;
    o.ref_anchor = sc.node(ctx.ref).position;
    o.other_anchor = sc.node(trp).position;
    o.rstd_s = maybe_quantize_timing(ctx, toa[trp] - toa[ctx.ref]);
    o.sync_offset_s =
        sc.node(trp).clock_offset_s - sc.node(ctx.ref).clock_offset_s;
    obs.push_back(o);
  }
  PositionEstimate est = solve_tdoa(obs, solver_options(ctx));
  ResultRow row = finish_row(trial, truth, est.position, est.converged);
  row.aggregated = cfg.num_ccs > 1;
  return row;
}

inline void tag_sl_row(ResultRow& row, const std::vector<SLMeasurementReport>& reports) {
  if (!reports.empty()) {
    row.arp_id = reports.front().arp_id;
    row.sync_source_id = reports.front().sync_source_id;
  }
}

inline ResultRow run_sl_trial(const ExperimentContext& ctx, int trial) {
  const Scenario& sc = ctx.scenario;
  const ExperimentConfig& cfg = ctx.cfg;
  SLScenarioView view = make_sl_view(sc, cfg.sl_bandwidth_prb);
  const Position3D truth = sc.node(view.target).position;
  SolveOptions opt = solver_options(ctx);
  ResultRow row;
  switch (cfg.technique) {
    case Technique::SlTdoaDl: {
      SlTdoaResult r = sl_tdoa_dl_like(view, sc, ctx.ref,
                                       cfg.noise.timing_sigma_s,
                                       static_cast<std::uint64_t>(trial),
                                       cfg.compensate_sync, opt);
      row = finish_row(trial, truth, r.estimate.position, r.estimate.converged);
      tag_sl_row(row, r.reports);
      break;
    }
    case Technique::SlTdoaUl: {
      SlTdoaResult r = sl_tdoa_ul_like(view, sc, cfg.noise.timing_sigma_s,
                                       static_cast<std::uint64_t>(trial),
                                       cfg.compensate_sync, opt);
      row = finish_row(trial, truth, r.estimate.position, r.estimate.converged);
      tag_sl_row(row, r.reports);
      break;
    }
    case Technique::SlRtt: {
      std::vector<RangeObservation> obs;
      std::vector<SLMeasurementReport> all_reports;
      int anchor_index = 0;
      for (const auto& anchor : view.anchors) {
        SlRttResult r = sl_rtt(view, sc, anchor, view.target, cfg.double_sided,
                               cfg.drift_ppm, cfg.turnaround_s,
                               cfg.noise.timing_sigma_s,
                               (static_cast<std::uint64_t>(trial) << 8) ^
                                   static_cast<std::uint64_t>(anchor_index));
        obs.push_back({sc.node(anchor).position, r.distance_m});
        for (auto& rep : r.reports) all_reports.push_back(std::move(rep));
        ++anchor_index;
      }
      PositionEstimate est = solve_rtt(obs, opt);
      row = finish_row(trial, truth, est.position, est.converged);
      tag_sl_row(row, all_reports);
      break;
    }
    case Technique::SlAoa: {
      SlAoaResult r = sl_aoa(view, sc, AngleFrame::Gcs, {},
                             cfg.noise.angle_sigma_deg,
                             static_cast<std::uint64_t>(trial), opt);
      row = finish_row(trial, truth, r.estimate.position, r.estimate.converged);
      tag_sl_row(row, r.reports);
      break;
    }
    default:
      throw std::logic_error("run_sl_trial: not a sidelink technique");
  }
  return row;
}

}  // namespace detail

/// Run the configured Monte-Carlo experiment. Solver failures become
/// non-converged rows; the batch never aborts on them. Deterministic for a
/// fixed (config, seed).
inline std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg) {
  detail::ExperimentContext ctx = detail::make_context(cfg);
  std::vector<ResultRow> rows;
  rows.reserve(static_cast<std::size_t>(cfg.trials));
  for (int trial = 0; trial < cfg.trials; ++trial) {
    ResultRow row;
    try {
      switch (cfg.technique) {
        case Technique::DlTdoa: row = detail::run_dl_tdoa_trial(ctx, trial); break;
        case Technique::UlTdoa: row = detail::run_ul_tdoa_trial(ctx, trial); break;
        case Technique::Rtt: row = detail::run_rtt_trial(ctx, trial); break;
        case Technique::Aoa: row = detail::run_aoa_trial(ctx, trial); break;
        case Technique::CarrierPhaseDd:
          row = detail::run_carrier_phase_dd_trial(ctx, trial);
          break;
        case Technique::CarrierPhaseRttLike:
          row = detail::run_carrier_phase_rtt_like_trial(ctx, trial);
          break;
        case Technique::FhTdoa: row = detail::run_fh_tdoa_trial(ctx, trial); break;
        case Technique::BwAggTdoa:
          row = detail::run_bw_agg_tdoa_trial(ctx, trial);
          break;
        default: row = detail::run_sl_trial(ctx, trial); break;
      }
    } catch (const ValidationError&) {
      throw;  // configuration problems abort before/independently of trials
    } catch (const std::invalid_argument&) {
      throw;  // under-determined systems are configuration problems too
    } catch (const std::exception&) {
      // solver failure: record a non-converged row at the best fallback
      const Position3D truth = ctx.scenario.node(ctx.target).position;
      Position3D fallback{};
      int count = 0;
      for (const auto& n : ctx.scenario.nodes()) {
        if (n.kind == NodeKind::Trp || n.kind == NodeKind::SlAnchorUe) {
          fallback = fallback + n.position;
          ++count;
        }
      }
      if (count > 0) fallback = (1.0 / count) * fallback;
      row = detail::finish_row(trial, truth, fallback, false);
    }
    row.trial = trial;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Result serialization (results.csv + summary.json).

inline void write_results_csv(std::span<const ResultRow> rows,
                              std::ostream& os) {
  os << "trial,true_x,true_y,true_z,est_x,est_y,est_z,horizontal_error_m,"
        "vertical_error_m,converged,aggregated,hop_provenance,arp_id,"
        "sync_source_id\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf),
                  "%d,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%d,%d,",
                  r.trial, r.truth.x, r.truth.y, r.truth.z, r.estimate.x,
                  r.estimate.y, r.estimate.z, r.horizontal_error_m,
                  r.vertical_error_m, r.converged ? 1 : 0,
                  r.aggregated ? 1 : 0);
    os << buf << to_string(r.hop_provenance) << ',' << r.arp_id << ','
       << r.sync_source_id << '\n';
  }
}

inline void write_results_csv(std::span<const ResultRow> rows,
                              const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  write_results_csv(rows, f);
}

/// Read back the columns summarize() needs (plus positions).
inline std::vector<ResultRow> read_results_csv(std::istream& is) {
  std::vector<ResultRow> rows;
  std::string line;
  if (!std::getline(is, line)) throw ParseError("results csv: empty input");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::string tok;
    std::istringstream ss(line);
    while (std::getline(ss, tok, ',')) cols.push_back(tok);
    if (cols.size() < 10) throw ParseError("results csv: malformed row");
    ResultRow r;
    r.trial = std::stoi(cols[0]);
    r.truth = {std::stod(cols[1]), std::stod(cols[2]), std::stod(cols[3])};
    r.estimate = {std::stod(cols[4]), std::stod(cols[5]), std::stod(cols[6])};
    r.horizontal_error_m = std::stod(cols[7]);
    r.vertical_error_m = std::stod(cols[8]);
    r.converged = cols[9] == "1";
    if (cols.size() > 12) r.arp_id = cols[12];
    if (cols.size() > 13) r.sync_source_id = cols[13];
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<ResultRow> read_results_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  return read_results_csv(f);
}

}  // namespace nrpos
