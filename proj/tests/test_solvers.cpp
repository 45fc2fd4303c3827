#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "nrpos/rng.hpp"
#include "nrpos/solvers.hpp"

using namespace nrpos;

namespace {

/// Noiseless forward models.
std::vector<TdoaObservation> tdoa_forward(const std::vector<Position3D>& anchors,
                                          const Position3D& target) {
  std::vector<TdoaObservation> obs;
  for (std::size_t i = 1; i < anchors.size(); ++i) {
    TdoaObservation o;
    o.ref_anchor = anchors[0];
    o.other_anchor = anchors[i];
    o.rstd_s = (distance(anchors[i], target) - distance(anchors[0], target)) /
               kSpeedOfLight;
    obs.push_back(o);
  }
  return obs;
}

std::vector<RangeObservation> range_forward(const std::vector<Position3D>& anchors,
                                            const Position3D& target) {
  std::vector<RangeObservation> obs;
  for (const auto& a : anchors) obs.push_back({a, distance(a, target)});
  return obs;
}

std::vector<BearingObservation> bearing_forward(
    const std::vector<Position3D>& anchors, const Position3D& target,
    bool with_zenith) {
  std::vector<BearingObservation> obs;
  for (const auto& a : anchors) {
    BearingObservation o;
    o.anchor = a;
    const Position3D d = target - a;
    o.azimuth_deg = wrap_deg_0_360(rad2deg(std::atan2(d.y, d.x)));
    if (with_zenith) {
      o.zenith_deg = rad2deg(std::acos(d.z / d.norm()));
    }
    obs.push_back(o);
  }
  return obs;
}

const std::vector<Position3D> kSquare = {
    {0, 0, 0}, {100, 0, 0}, {100, 100, 0}, {0, 100, 0}};

}  // namespace

TEST_CASE("solve_tdoa: symmetric fixed point at the square center") {
  std::vector<TdoaObservation> obs = tdoa_forward(kSquare, {50, 50, 0});
  for (const auto& o : obs) CHECK(o.rstd_s == Catch::Approx(0.0).margin(1e-18));
  SolveOptions opt;
  opt.fixed_z = 0.0;
  PositionEstimate est = solve_tdoa(obs, opt);
  REQUIRE(est.converged);
  CHECK(distance(est.position, {50, 50, 0}) < 1e-9);
}

TEST_CASE("solve_tdoa: forward-model round trip") {
  const Position3D target{30, 40, 0};
  std::vector<TdoaObservation> obs = tdoa_forward(kSquare, target);
  SolveOptions opt;
  opt.fixed_z = 0.0;
  PositionEstimate est = solve_tdoa(obs, opt);
  REQUIRE(est.converged);
  CHECK(distance(est.position, target) < 1e-6);
  CHECK(est.iterations <= opt.max_iterations);
}

TEST_CASE("solve_tdoa: under-determined input throws") {
  std::vector<TdoaObservation> obs = tdoa_forward(kSquare, {30, 40, 0});
  obs.resize(2);
  CHECK_THROWS_AS(solve_tdoa(obs, {}), std::invalid_argument);
  SolveOptions o3;
  o3.mode_2d = false;
  CHECK_THROWS_AS(solve_tdoa(obs, o3), std::invalid_argument);
}

TEST_CASE("solve_tdoa: known sync offsets are removed before solving") {
  const Position3D target{30, 40, 0};
  std::vector<TdoaObservation> obs = tdoa_forward(kSquare, target);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    obs[i].rstd_s += 1e-7 * static_cast<double>(i + 1);
    obs[i].sync_offset_s = 1e-7 * static_cast<double>(i + 1);
  }
  SolveOptions opt;
  opt.fixed_z = 0.0;
  PositionEstimate est = solve_tdoa(obs, opt);
  REQUIRE(est.converged);
  CHECK(distance(est.position, target) < 1e-6);
}

TEST_CASE("solve_rtt: exact intersection and infeasible all-zero ranges") {
  const Position3D target{20, 65, 0};
  std::vector<RangeObservation> obs = range_forward(
      {{0, 0, 0}, {100, 0, 0}, {40, 90, 0}}, target);
  SolveOptions opt;
  opt.fixed_z = 0.0;
  PositionEstimate est = solve_rtt(obs, opt);
  REQUIRE(est.converged);
  CHECK(distance(est.position, target) < 1e-9);

  // all ranges zero with distinct anchors: no consistent solution
  std::vector<RangeObservation> zero = {
      {{0, 0, 0}, 0.0}, {{100, 0, 0}, 0.0}, {{40, 90, 0}, 0.0}};
  PositionEstimate bad = solve_rtt(zero, opt);
  CHECK_FALSE(bad.converged);
  CHECK_FALSE(bad.diagnostics.empty());

  std::vector<RangeObservation> two = {{{0, 0, 0}, 5.0}, {{100, 0, 0}, 95.0}};
  CHECK_THROWS_AS(solve_rtt(two, opt), std::invalid_argument);
}

TEST_CASE("solve_aoa: analytic intersection and error paths") {
  // bearings 45 and 135 degrees from (0,0) and (100,0) meet at (50,50)
  std::vector<BearingObservation> obs = {{{0, 0, 0}, 45.0, {}},
                                         {{100, 0, 0}, 135.0, {}}};
  SolveOptions opt;
  opt.fixed_z = 0.0;
  PositionEstimate est = solve_aoa(obs, opt);
  REQUIRE(est.converged);
  CHECK(distance(est.position, {50, 50, 0}) < 1e-9);

  // three consistent bearings agree with any pair, residual 0
  std::vector<BearingObservation> three =
      bearing_forward({{0, 0, 0}, {100, 0, 0}, {0, 100, 0}}, {50, 50, 0}, false);
  PositionEstimate est3 = solve_aoa(three, opt);
  CHECK(distance(est3.position, {50, 50, 0}) < 1e-9);
  CHECK(est3.residual_norm < 1e-9);

  std::vector<BearingObservation> parallel = {{{0, 0, 0}, 45.0, {}},
                                              {{10, 0, 0}, 45.0, {}}};
  CHECK_THROWS_AS(solve_aoa(parallel, opt), std::domain_error);

  std::vector<BearingObservation> one = {{{0, 0, 0}, 45.0, {}}};
  CHECK_THROWS_AS(solve_aoa(one, opt), std::invalid_argument);
}

TEST_CASE("solve_aoa: 3D rays") {
  const Position3D target{30, 40, 7};
  std::vector<BearingObservation> obs = bearing_forward(
      {{0, 0, 0}, {100, 0, 10}, {0, 100, 20}}, target, true);
  SolveOptions opt;
  opt.mode_2d = false;
  PositionEstimate est = solve_aoa(obs, opt);
  REQUIRE(est.converged);
  CHECK(distance(est.position, target) < 1e-9);
}

TEST_CASE("translation equivariance of all solvers") {
  auto rng = derive_stream(55, "translate");
  for (int trial = 0; trial < 50; ++trial) {
    const Position3D shift{rng.uniform(-500, 500), rng.uniform(-500, 500), 0.0};
    const Position3D target{rng.uniform(20, 80), rng.uniform(20, 80), 0.0};
    std::vector<Position3D> anchors = kSquare;
    std::vector<Position3D> moved;
    for (const auto& a : anchors) moved.push_back(a + shift);
    SolveOptions opt;
    opt.fixed_z = 0.0;

    PositionEstimate t1 = solve_tdoa(tdoa_forward(anchors, target), opt);
    PositionEstimate t2 = solve_tdoa(tdoa_forward(moved, target + shift), opt);
    REQUIRE(distance(t2.position, t1.position + shift) < 1e-9);

    PositionEstimate r1 = solve_rtt(range_forward(anchors, target), opt);
    PositionEstimate r2 = solve_rtt(range_forward(moved, target + shift), opt);
    REQUIRE(distance(r2.position, r1.position + shift) < 1e-9);

    PositionEstimate a1 = solve_aoa(bearing_forward(anchors, target, false), opt);
    PositionEstimate a2 =
        solve_aoa(bearing_forward(moved, target + shift, false), opt);
    REQUIRE(distance(a2.position, a1.position + shift) < 1e-8);
  }
}

TEST_CASE("noiseless oracle equivalence on 100 random geometries per solver") {
  auto rng = derive_stream(56, "oracle_geoms");
  int done = 0;
  while (done < 100) {
    std::vector<Position3D> anchors;
    for (int k = 0; k < 4; ++k) {
      anchors.push_back({rng.uniform(-80, 80), rng.uniform(-80, 80), 0.0});
    }
    double min_sep = 1e9;
    for (int a = 0; a < 4; ++a) {
      for (int b = a + 1; b < 4; ++b) {
        min_sep = std::min(min_sep, distance(anchors[a], anchors[b]));
      }
    }
    if (min_sep < 30.0) continue;
    const Position3D target{rng.uniform(-40, 40), rng.uniform(-40, 40), 0.0};
    SolveOptions opt;
    opt.fixed_z = 0.0;

    PositionEstimate t = solve_tdoa(tdoa_forward(anchors, target), opt);
    REQUIRE(t.converged);
    REQUIRE(distance(t.position, target) < 1e-6);

    PositionEstimate r = solve_rtt(range_forward(anchors, target), opt);
    REQUIRE(r.converged);
    REQUIRE(distance(r.position, target) < 1e-6);

    PositionEstimate a = solve_aoa(bearing_forward(anchors, target, false), opt);
    REQUIRE(a.converged);
    REQUIRE(distance(a.position, target) < 1e-6);
    ++done;
  }
}

TEST_CASE("residual at the estimate never exceeds the initial residual") {
  auto rng = derive_stream(57, "monotone");
  for (int trial = 0; trial < 50; ++trial) {
    const Position3D target{rng.uniform(10, 90), rng.uniform(10, 90), 0.0};
    std::vector<TdoaObservation> obs = tdoa_forward(kSquare, target);
    // corrupt with heavy noise so the fit is imperfect
    for (auto& o : obs) o.rstd_s += rng.gaussian(30e-9);
    const Position3D init{rng.uniform(0, 100), rng.uniform(0, 100), 0.0};
    SolveOptions opt;
    opt.fixed_z = 0.0;
    opt.init = init;
    opt.residual_accept_rms_m = std::numeric_limits<double>::infinity();
    PositionEstimate est = solve_tdoa(obs, opt);
    double f0 = 0.0;
    for (const auto& o : obs) {
      const double model = distance(o.other_anchor, init) -
                           distance(o.ref_anchor, init);
      const double r = model - o.rstd_s * kSpeedOfLight;
      f0 += r * r;
    }
    REQUIRE(est.residual_norm <= std::sqrt(f0) + 1e-12);
  }
}

TEST_CASE("covariance proxy is reported for over-determined 2D fits") {
  std::vector<TdoaObservation> obs = tdoa_forward(kSquare, {30, 40, 0});
  SolveOptions opt;
  opt.fixed_z = 0.0;
  PositionEstimate est = solve_tdoa(obs, opt);
  REQUIRE(est.covariance_proxy.has_value());
  const auto& cov = *est.covariance_proxy;
  CHECK(cov[0] >= 0.0);
  CHECK(cov[4] >= 0.0);
}
