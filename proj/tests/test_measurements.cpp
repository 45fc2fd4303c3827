#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "nrpos/measurements.hpp"
#include "test_util.hpp"

using namespace nrpos;

namespace {

Scenario pair_scenario(Position3D a, Position3D b, double offset_a_s = 0.0,
                       double offset_b_s = 0.0) {
  nlohmann::json doc;
  doc["seed"] = 9;
  doc["carrier_frequencies"] = {{"pfl0", 3.5e9}};
  doc["nodes"] = {
      {{"id", "trp0"},
       {"kind", "TRP"},
       {"position", {a.x, a.y, a.z}},
       {"clock_offset_s", offset_a_s}},
      {{"id", "ue0"},
       {"kind", "UE"},
       {"position", {b.x, b.y, b.z}},
       {"clock_offset_s", offset_b_s}},
  };
  return build_scenario(doc);
}

}  // namespace

TEST_CASE("measure_rstd: symmetry, oracle value, antisymmetry") {
  nlohmann::json doc;
  doc["seed"] = 1;
  doc["carrier_frequencies"] = {{"pfl0", 3.5e9}};
  doc["nodes"] = {
      {{"id", "ref"}, {"kind", "TRP"}, {"position", {0, 0, 0}}},
      {{"id", "other"}, {"kind", "TRP"}, {"position", {100, 0, 0}}},
      {{"id", "mid"}, {"kind", "TRP"}, {"position", {50, 0, 0}}},
      {{"id", "ue"}, {"kind", "UE"}, {"position", {30, 40, 0}}},
      {{"id", "ue_center"}, {"kind", "UE"}, {"position", {50, 10, 0}}},
  };
  Scenario sc = build_scenario(doc);

  // equidistant from both TRPs
  CHECK(measure_rstd(sc, "ue_center", "ref", "other", 0.0).value_s ==
        Catch::Approx(0.0).margin(1e-18));

  // oracle: (sqrt(6500) - 50) / c
  const double oracle = (std::sqrt(6500.0) - 50.0) / kSpeedOfLight;
  const double got = measure_rstd(sc, "ue", "ref", "other", 0.0).value_s;
  CHECK(got == Catch::Approx(oracle).margin(1e-18));
  CHECK(got * 1e9 == Catch::Approx(102.146).margin(5e-4));

  // swapping ref and other negates the value exactly
  CHECK(measure_rstd(sc, "ue", "other", "ref", 0.0).value_s == -got);

  CHECK_THROWS_AS(measure_rstd(sc, "ue", "ref", "nope", 0.0), ValidationError);
}

TEST_CASE("measure_rtoa: oracle value and clock offsets") {
  Scenario colo = pair_scenario({5, 5, 5}, {5, 5, 5});
  CHECK(measure_rtoa(colo, "trp0", "ue0", 0.0).value_s == 0.0);

  Scenario sc = pair_scenario({0, 0, 0}, {300, 0, 0});
  const double got = measure_rtoa(sc, "trp0", "ue0", 0.0).value_s;
  CHECK(got == Catch::Approx(300.0 / kSpeedOfLight).margin(1e-18));
  CHECK(got * 1e6 == Catch::Approx(1.00069).margin(5e-6));

  // rx clock offset +50 ns shifts the result by -50 ns
  Scenario off = pair_scenario({0, 0, 0}, {300, 0, 0}, 50e-9, 0.0);
  CHECK(measure_rtoa(off, "trp0", "ue0", 0.0).value_s ==
        Catch::Approx(got - 50e-9).margin(1e-18));
}

TEST_CASE("rxtx pair: RTT oracle and clock-offset invariance") {
  Scenario colo = pair_scenario({1, 2, 3}, {1, 2, 3});
  auto a0 = measure_rxtx_diff(colo, "ue0", "trp0", 0.0);
  auto b0 = measure_rxtx_diff(colo, "trp0", "ue0", 0.0);
  CHECK(rtt_from_pair(a0, b0) == 0.0);

  Scenario sc = pair_scenario({0, 0, 0}, {15, 0, 0});
  auto ue = measure_rxtx_diff(sc, "ue0", "trp0", 0.0);
  auto gnb = measure_rxtx_diff(sc, "trp0", "ue0", 0.0);
  const double rtt = rtt_from_pair(ue, gnb);
  CHECK(rtt == Catch::Approx(30.0 / kSpeedOfLight).margin(1e-18));
  CHECK(rtt * 1e9 == Catch::Approx(100.07).margin(5e-3));
  CHECK(ue.kind == TimingKind::UeRxTx);
  CHECK(gnb.kind == TimingKind::GnbRxTx);

  // symmetric under swapping which side initiates
  CHECK(rtt_from_pair(gnb, ue) == rtt);

  // adding clock offsets to either node leaves the noiseless RTT unchanged
  auto rng = derive_stream(4, "rtt_offsets");
  for (int i = 0; i < 100; ++i) {
    Scenario off = pair_scenario({0, 0, 0}, {15, 0, 0},
                                 rng.uniform(-1e-3, 1e-3),
                                 rng.uniform(-1e-3, 1e-3));
    auto u = measure_rxtx_diff(off, "ue0", "trp0", 0.0);
    auto g = measure_rxtx_diff(off, "trp0", "ue0", 0.0);
    REQUIRE(rtt_from_pair(u, g) == Catch::Approx(rtt).margin(1e-18));
  }
}

TEST_CASE("measure_aoa: axis cases and closed-form oracle") {
  Scenario px = pair_scenario({0, 0, 0}, {10, 0, 0});
  auto a = measure_aoa(px, "trp0", "ue0", AngleFrame::Gcs);
  CHECK(a.azimuth_deg == Catch::Approx(0.0).margin(1e-12));
  CHECK(a.zenith_deg == Catch::Approx(90.0).margin(1e-12));

  Scenario py = pair_scenario({0, 0, 0}, {0, 10, 0});
  auto b = measure_aoa(py, "trp0", "ue0", AngleFrame::Gcs);
  CHECK(b.azimuth_deg == Catch::Approx(90.0).margin(1e-12));

  // direction (1, 1, sqrt(2)): azimuth 45, zenith 45
  Scenario pd = pair_scenario({0, 0, 0}, {1, 1, std::sqrt(2.0)});
  auto c = measure_aoa(pd, "trp0", "ue0", AngleFrame::Gcs);
  CHECK(c.azimuth_deg == Catch::Approx(45.0).margin(1e-9));
  CHECK(c.zenith_deg == Catch::Approx(45.0).margin(1e-9));

  Scenario same = pair_scenario({3, 3, 3}, {3, 3, 3});
  CHECK_THROWS_AS(measure_aoa(same, "trp0", "ue0", AngleFrame::Gcs),
                  ValidationError);
}

TEST_CASE("lcs_to_gcs: identity, bearing rotation, round trip") {
  AngleMeasurement in;
  in.azimuth_deg = 31.0;
  in.zenith_deg = 72.0;
  in.frame = AngleFrame::Lcs;

  auto id = lcs_to_gcs(in, PanelOrientation{0, 0, 0});
  CHECK(id.azimuth_deg == Catch::Approx(31.0).margin(1e-12));
  CHECK(id.zenith_deg == Catch::Approx(72.0).margin(1e-12));
  CHECK(id.frame == AngleFrame::Gcs);

  // oracle: Rz(90) applied to (1,0,0) gives (0,1,0)
  AngleMeasurement x;
  x.azimuth_deg = 0.0;
  x.zenith_deg = 90.0;
  x.frame = AngleFrame::Lcs;
  auto rot = lcs_to_gcs(x, PanelOrientation{90, 0, 0});
  CHECK(rot.azimuth_deg == Catch::Approx(90.0).margin(1e-9));
  CHECK(rot.zenith_deg == Catch::Approx(90.0).margin(1e-9));

  // round trip restores the input
  auto rng = derive_stream(21, "lcs_round");
  for (int i = 0; i < 300; ++i) {
    AngleMeasurement m;
    m.azimuth_deg = rng.uniform(0, 360);
    m.zenith_deg = rng.uniform(1.0, 179.0);
    m.frame = AngleFrame::Lcs;
    PanelOrientation o{rng.uniform(0, 360), rng.uniform(-90, 90),
                       rng.uniform(-90, 90)};
    auto back = gcs_to_lcs(lcs_to_gcs(m, o), o);
    REQUIRE(back.azimuth_deg == Catch::Approx(m.azimuth_deg).margin(1e-9));
    REQUIRE(back.zenith_deg == Catch::Approx(m.zenith_deg).margin(1e-9));
  }

  CHECK_THROWS_AS(lcs_to_gcs(id, PanelOrientation{}), ValidationError);
}

TEST_CASE("rotation preserves unit norm to 1e-12") {
  auto rng = derive_stream(22, "rot_norm");
  for (int i = 0; i < 1000; ++i) {
    PanelOrientation o{rng.uniform(0, 360), rng.uniform(-180, 180),
                       rng.uniform(-180, 180)};
    const Position3D u = detail::unit_from_angles(rng.uniform(0, 360),
                                                  rng.uniform(0, 180));
    const Position3D r = detail::rotate(detail::rotation_matrix(o), u);
    REQUIRE(std::abs(r.norm() - 1.0) < 1e-12);
    // transposed rotation inverts
    const Position3D back = detail::rotate_transposed(detail::rotation_matrix(o), r);
    REQUIRE(distance(back, u) < 1e-12);
  }
}

TEST_CASE("quantize_timing: grid values and rounding") {
  CHECK(quantize_timing(0.0, ReportingGrid{-1}) == 0.0);

  // grid step for k = -1 is Tc/2 = 0.25431 ns
  const double step = ReportingGrid{-1}.step_s();
  CHECK(step * 1e9 == Catch::Approx(0.25431).margin(5e-6));
  CHECK(kTcSeconds * 1e9 == Catch::Approx(0.5086).margin(5e-5));

  // 1.000 ns at k=-1 quantizes to 4 steps (oracle: round(v/step)*step)
  const double q = quantize_timing(1e-9, ReportingGrid{-1});
  CHECK(q == Catch::Approx(std::round(1e-9 / step) * step).margin(1e-24));
  CHECK(q == Catch::Approx(4.0 * step).margin(1e-24));

  CHECK_THROWS_AS(quantize_timing(1e-9, ReportingGrid{0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(quantize_timing(1e-9, ReportingGrid{-7}),
                  std::invalid_argument);
}

TEST_CASE("quantized timing error is at most half a step for all k") {
  auto rng = derive_stream(23, "qtiming");
  for (int k = -6; k <= -1; ++k) {
    const ReportingGrid grid{k};
    const double step = grid.step_s();
    for (int i = 0; i < 20000; ++i) {
      const double v = rng.uniform(-1e-6, 1e-6);
      const double q = quantize_timing(v, grid);
      REQUIRE(std::abs(q - v) <= step / 2.0 + 1e-24);
      // output is on the grid
      REQUIRE(std::abs(q / step - std::round(q / step)) < 1e-9);
    }
  }
}
