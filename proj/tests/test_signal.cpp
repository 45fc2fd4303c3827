#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <complex>
#include <set>
#include <sstream>

#include "nrpos/aggregation.hpp"
#include "nrpos/channel.hpp"
#include "nrpos/resource_grid.hpp"
#include "nrpos/rng.hpp"
#include "nrpos/stitching.hpp"
#include "nrpos/zadoff_chu.hpp"

using namespace nrpos;

namespace {

ChannelEstimate flat_band(int n, double scs = 30e3, int first = 0) {
  ChannelEstimate e;
  e.scs_hz = scs;
  for (int i = 0; i < n; ++i) {
    e.subcarrier.push_back(first + i);
    e.value.emplace_back(1.0, 0.0);
  }
  return e;
}

ChannelEstimate slice(const ChannelEstimate& full, int first, int count) {
  ChannelEstimate out;
  out.scs_hz = full.scs_hz;
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (full.subcarrier[i] >= first && full.subcarrier[i] < first + count) {
      out.subcarrier.push_back(full.subcarrier[i]);
      out.value.push_back(full.value[i]);
    }
  }
  return out;
}

/// max |a - e^{j theta} b| after aligning the global phase.
double max_error_after_phase_alignment(const ChannelEstimate& a,
                                       const ChannelEstimate& b) {
  REQUIRE(a.subcarrier == b.subcarrier);
  std::complex<double> acc(0, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += std::conj(b.value[i]) * a.value[i];
  }
  const std::complex<double> rot = acc / std::abs(acc);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.value[i] - rot * b.value[i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("generate_prs_grid: occupancy counts and staggering") {
  // 1 PRB, comb 2, 2 symbols: 12 occupied REs covering offsets {0,1}
  ResourceConfig c2;
  c2.comb_size = 2;
  c2.num_symbols = 2;
  c2.bandwidth_prb = 1;
  PrsGrid g2 = generate_prs_grid(c2, 1);
  int occupied = 0;
  std::set<int> offsets;
  for (int l = 0; l < 2; ++l) {
    for (int sc = 0; sc < 12; ++sc) {
      if (std::abs(g2.values[l][sc]) > 0.0) {
        ++occupied;
        offsets.insert(sc % 2);
        CHECK(std::abs(g2.values[l][sc]) == Catch::Approx(1.0).margin(1e-12));
      }
    }
  }
  CHECK(occupied == 12);
  CHECK(offsets == std::set<int>{0, 1});

  // comb 6 over 6 symbols: every subcarrier occupied exactly once
  ResourceConfig c6;
  c6.comb_size = 6;
  c6.num_symbols = 6;
  c6.bandwidth_prb = 2;
  PrsGrid g6 = generate_prs_grid(c6, 1);
  for (int sc = 0; sc < 24; ++sc) {
    int count = 0;
    for (int l = 0; l < 6; ++l) {
      if (std::abs(g6.values[l][sc]) > 0.0) ++count;
    }
    CHECK(count == 1);
  }

  // comb 1, 1 symbol: the whole band in one symbol
  ResourceConfig c1;
  c1.comb_size = 1;
  c1.num_symbols = 1;
  c1.bandwidth_prb = 3;
  PrsGrid g1 = generate_prs_grid(c1, 1);
  for (int sc = 0; sc < 36; ++sc) {
    CHECK(std::abs(g1.values[0][sc]) > 0.0);
  }

  // determinism per seed
  PrsGrid again = generate_prs_grid(c6, 1);
  CHECK(again.values == g6.values);
  PrsGrid other = generate_prs_grid(c6, 2);
  CHECK(other.values != g6.values);
}

TEST_CASE("ResourceConfig validation") {
  ResourceConfig bad;
  bad.comb_size = 3;
  bad.bandwidth_prb = 1;
  CHECK_THROWS_AS(generate_prs_grid(bad, 1), ValidationError);

  ResourceConfig sym;
  sym.comb_size = 2;
  sym.num_symbols = 13;
  sym.bandwidth_prb = 1;
  CHECK_THROWS_AS(generate_prs_grid(sym, 1), ValidationError);

  // sidelink SCS rules: {15,30,60} FR1, {60,120} FR2
  ResourceConfig sl;
  sl.sidelink = true;
  sl.comb_size = 4;
  sl.num_symbols = 4;
  sl.bandwidth_prb = 4;
  sl.subcarrier_spacing_khz = 120;
  sl.fr = FrequencyRange::Fr1;
  CHECK_THROWS_AS(validate_resource_config(sl), ValidationError);
  sl.fr = FrequencyRange::Fr2;
  CHECK_NOTHROW(validate_resource_config(sl));
  sl.subcarrier_spacing_khz = 15;
  CHECK_THROWS_AS(validate_resource_config(sl), ValidationError);
  sl.fr = FrequencyRange::Fr1;
  CHECK_NOTHROW(validate_resource_config(sl));
  // comb 12 is not a sidelink pattern
  sl.comb_size = 12;
  sl.num_symbols = 8;
  sl.re_offsets.clear();
  CHECK_THROWS_AS(validate_resource_config(sl), ValidationError);

  // custom offsets that do not cover the comb are rejected
  ResourceConfig partial;
  partial.comb_size = 2;
  partial.num_symbols = 2;
  partial.bandwidth_prb = 1;
  partial.re_offsets = {0, 0};
  CHECK_THROWS_AS(validate_resource_config(partial), ValidationError);
}

TEST_CASE("full staggering holds for every valid comb/symbol combination") {
  for (int comb : {1, 2, 4, 6, 12}) {
    for (int sym = comb; sym <= 12; ++sym) {
      ResourceConfig c;
      c.comb_size = comb;
      c.num_symbols = sym;
      c.bandwidth_prb = 2;
      validate_resource_config(c);
      std::set<int> offsets(c.re_offsets.begin(), c.re_offsets.end());
      REQUIRE(static_cast<int>(offsets.size()) == comb);
      // combining symbols reaches every subcarrier
      PrsGrid g = generate_prs_grid(c, 3);
      auto combined = combine_staggered(g);
      for (const auto& v : combined) REQUIRE(std::abs(v) > 0.0);
    }
  }
}

TEST_CASE("zc_sequence: flatness and reference values") {
  const auto seq = zc_sequence(1, 139, 139);
  for (const auto& v : seq) {
    REQUIRE(std::abs(v) == Catch::Approx(1.0).margin(1e-12));
  }
  CHECK(seq[0].real() == Catch::Approx(1.0).margin(1e-12));
  CHECK(seq[0].imag() == Catch::Approx(0.0).margin(1e-12));
  // n = 1: phase -360/139 degrees
  const double phase = std::arg(seq[1]) * 180.0 / kPi;
  CHECK(phase == Catch::Approx(-360.0 / 139.0).margin(1e-9));

  // flatness across random valid roots
  auto rng = derive_stream(5, "zc");
  for (int t = 0; t < 50; ++t) {
    const int n_zc = 139;
    int u = 1 + static_cast<int>(rng.uniform() * (n_zc - 1));
    if (std::gcd(u, n_zc) != 1) continue;
    for (const auto& v : zc_sequence(u, n_zc, 100)) {
      REQUIRE(std::abs(v) == Catch::Approx(1.0).margin(1e-12));
    }
  }

  CHECK_THROWS_AS(zc_sequence(0, 139, 10), ValidationError);
  CHECK_THROWS_AS(zc_sequence(139, 139, 10), ValidationError);
  CHECK_THROWS_AS(zc_sequence(2, 140, 10), ValidationError);  // gcd != 1
  CHECK_THROWS_AS(zc_sequence(1, 100, 139), ValidationError); // too short
}

TEST_CASE("generate_srs_zc: hops share exactly L elements") {
  HopPlan plan = make_uniform_hop_plan(26, 8, 2);
  CHECK(plan.num_hops() == 4);
  CHECK(plan.overlap_elements == 24);
  auto hops = generate_srs_zc(plan, 5, 313);
  REQUIRE(hops.size() == 4);
  const auto full = zc_sequence(5, 313, 26 * 12);
  for (std::size_t h = 0; h + 1 < hops.size(); ++h) {
    // shared virtual positions carry identical sequence values
    int shared = 0;
    for (std::size_t i = 0; i < hops[h].size(); ++i) {
      for (std::size_t j = 0; j < hops[h + 1].size(); ++j) {
        if (hops[h].subcarrier[i] == hops[h + 1].subcarrier[j]) {
          ++shared;
          REQUIRE(hops[h].value[i] == hops[h + 1].value[j]);
        }
      }
    }
    REQUIRE(shared == plan.overlap_elements);
  }
  // every hop element matches the virtual full-band sequence
  for (const auto& hop : hops) {
    for (std::size_t i = 0; i < hop.size(); ++i) {
      REQUIRE(hop.value[i] == full[hop.subcarrier[i]]);
    }
  }
}

TEST_CASE("hop plan validation") {
  CHECK_THROWS_AS(make_uniform_hop_plan(25, 8, 2), ValidationError);
  HopPlan plan = make_uniform_hop_plan(104, 24, 4);
  CHECK(plan.num_hops() == 5);
  CHECK(plan.timeline_symbols() == 5 * 2 + 4 * 2);
  HopPlan bad = plan;
  bad.duration_symbols = 12;  // 5 hops cannot fit one 12-symbol resource
  CHECK_THROWS_AS(validate_hop_plan(bad), ValidationError);
  bad = plan;
  bad.hop_order.pop_back();  // coverage gap
  CHECK_THROWS_AS(validate_hop_plan(bad), ValidationError);
}

TEST_CASE("apply_channel: identity, rotation, delay ramp") {
  ChannelEstimate tx = flat_band(48);
  ChannelEstimate same = apply_channel(tx, 0.0, 0.0, 0.0, std::nullopt, 1);
  for (std::size_t i = 0; i < tx.size(); ++i) {
    REQUIRE(same.value[i] == tx.value[i]);
  }

  ChannelEstimate rot = apply_channel(tx, 0.0, 0.0, 0.7, std::nullopt, 1);
  for (std::size_t i = 0; i < tx.size(); ++i) {
    REQUIRE(std::arg(rot.value[i] / tx.value[i]) ==
            Catch::Approx(0.7).margin(1e-12));
  }

  // tau = 3 sample periods: phase slope -2*pi*3/N per subcarrier (DFT shift)
  const int n = 48;
  const double tau = 3.0 / (n * tx.scs_hz);
  ChannelEstimate ramp = apply_channel(tx, tau, 0.0, 0.0, std::nullopt, 1);
  for (int m = 1; m < n; ++m) {
    const double dphi =
        std::arg(ramp.value[m] / ramp.value[m - 1]);
    REQUIRE(dphi == Catch::Approx(-2.0 * kPi * 3.0 / n).margin(1e-12));
  }

  CHECK_THROWS_AS(apply_channel(tx, 1.0, 0, 0, std::nullopt, 1),
                  std::invalid_argument);
}

TEST_CASE("estimate_hop_phase_offset") {
  ChannelEstimate a = flat_band(24);
  CHECK(estimate_hop_phase_offset(a, a) == 0.0);

  ChannelEstimate b = a;
  for (auto& v : b.value) v *= std::polar(1.0, 0.7);
  CHECK(estimate_hop_phase_offset(a, b) == Catch::Approx(0.7).margin(1e-12));

  // offsets theta and theta + 2 pi are indistinguishable; output in (-pi, pi]
  ChannelEstimate c = a;
  for (auto& v : c.value) v *= std::polar(1.0, 0.7 + 2.0 * kPi);
  CHECK(estimate_hop_phase_offset(a, c) == Catch::Approx(0.7).margin(1e-12));
  ChannelEstimate d = a;
  for (auto& v : d.value) v *= std::polar(1.0, kPi);
  CHECK(estimate_hop_phase_offset(a, d) == Catch::Approx(kPi).margin(1e-12));

  ChannelEstimate far = flat_band(24, 30e3, 100);
  CHECK_THROWS_AS(estimate_hop_phase_offset(a, far), ValidationError);

  ChannelEstimate zero = a;
  for (auto& v : zero.value) v = 0.0;
  CHECK_THROWS_AS(estimate_hop_phase_offset(a, zero), ValidationError);
}

TEST_CASE("stitch_hops: identity for a single hop") {
  HopPlan plan = make_uniform_hop_plan(24, 24, 0);
  ChannelEstimate h = flat_band(24 * 12);
  std::vector<ChannelEstimate> hops = {h};
  ChannelEstimate out = stitch_hops(hops, plan);
  CHECK(out.subcarrier == h.subcarrier);
  for (std::size_t i = 0; i < h.size(); ++i) REQUIRE(out.value[i] == h.value[i]);
}

TEST_CASE("stitching equals the full-band reference on 50 random plans") {
  auto rng = derive_stream(17, "stitch_plans");
  int done = 0;
  while (done < 50) {
    const int hop_prb = 6 + static_cast<int>(rng.uniform() * 18);
    const int overlap = 1 + static_cast<int>(rng.uniform() * (hop_prb / 2));
    const int hops_n = 2 + static_cast<int>(rng.uniform() * 4);
    const int total = hop_prb + (hops_n - 1) * (hop_prb - overlap);
    HopPlan plan;
    try {
      plan = make_uniform_hop_plan(total, hop_prb, overlap);
    } catch (const ValidationError&) {
      continue;
    }
    const int n_sc = total * 12;
    // random unit-modulus reference over the band
    ChannelEstimate ref = flat_band(n_sc);
    for (auto& v : ref.value) v = std::polar(1.0, rng.uniform(-kPi, kPi));
    const double ts = 1.0 / (n_sc * ref.scs_hz);
    const double tau = rng.uniform(0.0, 6.0) * ts;
    const double carrier = rng.uniform(-kPi, kPi);

    std::vector<ChannelEstimate> est_hops;
    for (int h = 0; h < plan.num_hops(); ++h) {
      ChannelEstimate tx = slice(ref, plan.hop_order[h] * 12, hop_prb * 12);
      ChannelEstimate rx = apply_channel(tx, tau, carrier,
                                         rng.uniform(-kPi, kPi),
                                         std::nullopt, 1);
      est_hops.push_back(estimate_channel(rx, tx));
    }
    ChannelEstimate stitched = stitch_hops(est_hops, plan);

    ChannelEstimate full_rx = apply_channel(ref, tau, carrier, 0.0,
                                            std::nullopt, 1);
    ChannelEstimate full = estimate_channel(full_rx, ref);
    REQUIRE(max_error_after_phase_alignment(stitched, full) < 1e-9);

    // hop order reversal changes nothing but a global phase
    std::vector<ChannelEstimate> reversed(est_hops.rbegin(), est_hops.rend());
    ChannelEstimate stitched_rev = stitch_hops(reversed, plan);
    REQUIRE(max_error_after_phase_alignment(stitched_rev, stitched) < 1e-9);
    ++done;
  }
}

TEST_CASE("stitch_hops: coverage gap is an error") {
  HopPlan plan = make_uniform_hop_plan(42, 10, 2);
  std::vector<ChannelEstimate> hops;
  for (int h = 0; h < plan.num_hops(); ++h) {
    hops.push_back(flat_band(10 * 12, 30e3, plan.hop_order[h] * 12));
  }
  hops.erase(hops.begin() + 1);
  CHECK_THROWS_AS(stitch_hops(hops, plan), ValidationError);
}

TEST_CASE("link_resources") {
  auto make_rc = [](int start, int bw, const char* tag) {
    ResourceConfig rc;
    rc.comb_size = 2;
    rc.num_symbols = 2;
    rc.bandwidth_prb = bw;
    rc.start_prb = start;
    rc.link_criteria = tag;
    return rc;
  };
  std::vector<ResourceConfig> two = {make_rc(0, 52, "qc1"), make_rc(52, 52, "qc1")};
  auto linked = link_resources(two, "qc1");
  REQUIRE(linked.has_value());
  CHECK(linked->members.size() == 2);
  CHECK(linked->link_criteria_tag == "qc1");

  std::vector<ResourceConfig> four = {make_rc(0, 10, "t"), make_rc(10, 10, "t"),
                                      make_rc(20, 10, "t"), make_rc(30, 10, "t")};
  CHECK_THROWS_AS(link_resources(four, "t"), ValidationError);

  std::vector<ResourceConfig> gap = {make_rc(0, 52, "qc1"), make_rc(60, 52, "qc1")};
  CHECK_THROWS_AS(link_resources(gap, "qc1"), ValidationError);

  std::vector<ResourceConfig> mismatch = {make_rc(0, 52, "qc1"),
                                          make_rc(52, 52, "qc2")};
  CHECK_FALSE(link_resources(mismatch, "qc1").has_value());
}

TEST_CASE("aggregate_linked: identity and full-band equivalence") {
  auto rng = derive_stream(18, "agg");
  // single CC is returned unchanged
  ChannelEstimate one = flat_band(120);
  ResourceConfig rc1;
  rc1.bandwidth_prb = 10;
  std::vector<ChannelEstimate> es = {one};
  std::vector<ResourceConfig> ms = {rc1};
  AggregationResult r1 = aggregate_linked(es, ms, true);
  CHECK_FALSE(r1.degraded);
  CHECK(r1.estimate.subcarrier == one.subcarrier);

  // three contiguous CCs, noiseless, phase continuous: equals one wide band
  const int cc_prb = 20;
  ChannelEstimate ref = flat_band(3 * cc_prb * 12);
  for (auto& v : ref.value) v = std::polar(1.0, rng.uniform(-kPi, kPi));
  const double ts = 1.0 / (ref.size() * ref.scs_hz);
  const double tau = 2.7 * ts;
  const double carrier = 0.4;
  std::vector<ChannelEstimate> estimates;
  std::vector<ResourceConfig> members;
  for (int cc = 0; cc < 3; ++cc) {
    ResourceConfig rc;
    rc.comb_size = 1;
    rc.num_symbols = 1;
    rc.bandwidth_prb = cc_prb;
    rc.start_prb = cc * cc_prb;
    rc.link_criteria = "agg";
    members.push_back(rc);
    ChannelEstimate tx = slice(ref, cc * cc_prb * 12, cc_prb * 12);
    ChannelEstimate rx = apply_channel(tx, tau, carrier, 0.0, std::nullopt, 1);
    estimates.push_back(estimate_channel(rx, tx));
  }
  AggregationResult agg = aggregate_linked(estimates, members, true);
  CHECK_FALSE(agg.degraded);
  ChannelEstimate full = estimate_channel(
      apply_channel(ref, tau, carrier, 0.0, std::nullopt, 1), ref);
  REQUIRE(agg.estimate.subcarrier == full.subcarrier);
  for (std::size_t i = 0; i < full.size(); ++i) {
    REQUIRE(std::abs(agg.estimate.value[i] - full.value[i]) < 1e-12);
  }
  const double toa_agg = estimate_toa(agg.estimate, 16);
  const double toa_full = estimate_toa(full, 16);
  CHECK(std::abs(toa_agg - toa_full) < 1e-15);

  // broken phase continuity degrades the combination
  std::vector<ChannelEstimate> est_bad;
  for (int cc = 0; cc < 3; ++cc) {
    ChannelEstimate tx = slice(ref, cc * cc_prb * 12, cc_prb * 12);
    ChannelEstimate rx = apply_channel(tx, tau, rng.uniform(-kPi, kPi), 0.0,
                                       std::nullopt, 1);
    est_bad.push_back(estimate_channel(rx, tx));
  }
  AggregationResult degraded = aggregate_linked(est_bad, members, false);
  CHECK(degraded.degraded);
  const double toa_deg = estimate_toa(degraded.estimate, 16);
  CHECK(std::abs(toa_deg - tau) > std::abs(toa_agg - tau));

  CHECK_THROWS_AS(aggregate_linked(std::vector<ChannelEstimate>{},
                                   std::vector<ResourceConfig>{}, true),
                  ValidationError);
}

TEST_CASE("estimate_toa: zero delay, on-grid delay, shift equivariance") {
  ChannelEstimate tx = flat_band(288);
  ChannelEstimate est0 =
      estimate_channel(apply_channel(tx, 0.0, 0.0, 0.0, std::nullopt, 1), tx);
  CHECK(std::abs(estimate_toa(est0, 16)) < 1e-12);

  const double ts = 1.0 / (288 * tx.scs_hz);
  ChannelEstimate est3 = estimate_channel(
      apply_channel(tx, 3.0 * ts, 0.0, 0.0, std::nullopt, 1), tx);
  CHECK(std::abs(estimate_toa(est3, 16) - 3.0 * ts) < 1e-3 * ts);

  // shift equivariance within the measured interpolation tolerance
  // (worst-case parabola bias at oversampling 16 is ~1.1e-5 sample periods)
  auto rng = derive_stream(19, "toa_shift");
  for (int i = 0; i < 40; ++i) {
    const double tau = rng.uniform(0.5, 5.0) * ts;
    const double delta = rng.uniform(0.1, 3.0) * ts;
    const double t1 = estimate_toa(
        estimate_channel(apply_channel(tx, tau, 0, 0, std::nullopt, 1), tx), 16);
    const double t2 = estimate_toa(
        estimate_channel(apply_channel(tx, tau + delta, 0, 0, std::nullopt, 1), tx),
        16);
    REQUIRE(std::abs((t2 - t1) - delta) < 1e-4 * ts);
  }

  ChannelEstimate tiny;
  tiny.scs_hz = 30e3;
  tiny.subcarrier = {0};
  tiny.value = {{1.0, 0.0}};
  CHECK_THROWS_AS(estimate_toa(tiny, 16), std::invalid_argument);
}

TEST_CASE("check_srs_collision") {
  const std::vector<std::vector<int>> srs = {{2}, {4}, {6}};

  // no collision: transmit everything
  auto d0 = check_srs_collision(srs, {1, 3}, std::nullopt);
  CHECK(d0.transmit_all);

  // collision without a window: drop all linked SRS
  auto d1 = check_srs_collision(srs, {4}, std::nullopt);
  CHECK_FALSE(d1.transmit_all);
  for (bool t : d1.transmit) CHECK_FALSE(t);

  // collision inside a 4-slot window: SRS prioritized
  auto d2 = check_srs_collision(srs, {4}, PriorityWindow{2, 4});
  CHECK(d2.transmit_all);

  // collision outside the window still drops everything
  auto d3 = check_srs_collision(srs, {6}, PriorityWindow{2, 4});
  CHECK_FALSE(d3.transmit_all);

  CHECK_THROWS_AS(check_srs_collision(srs, {4}, PriorityWindow{0, 3}),
                  ValidationError);
}

TEST_CASE("channel CSV round trip") {
  auto rng = derive_stream(20, "csv");
  ChannelEstimate e;
  e.scs_hz = 15e3;
  for (int i = 0; i < 50; ++i) {
    e.subcarrier.push_back(i * 2);
    e.value.emplace_back(rng.uniform(-2, 2), rng.uniform(-2, 2));
  }
  std::stringstream ss;
  write_channel_csv(e, ss);
  ChannelEstimate back = read_channel_csv(ss, e.scs_hz);
  REQUIRE(back.subcarrier == e.subcarrier);
  for (std::size_t i = 0; i < e.size(); ++i) {
    REQUIRE(back.value[i].real() == e.value[i].real());
    REQUIRE(back.value[i].imag() == e.value[i].imag());
  }
}
