#pragma once
#include <algorithm>
#include <complex>
#include <map>
#include <span>
#include <vector>

#include "nrpos/angles.hpp"
#include "nrpos/channel.hpp"
#include "nrpos/errors.hpp"
#include "nrpos/zadoff_chu.hpp"

namespace nrpos {

/// Phase jump of hop b relative to hop a estimated from their overlapping
/// subcarriers: angle of sum(conj(a_m) * b_m), radians in (-pi, pi].
inline double estimate_hop_phase_offset(const ChannelEstimate& a,
                                        const ChannelEstimate& b) {
  a.validate();
  b.validate();
  std::complex<double> acc(0.0, 0.0);
  std::size_t ia = 0, ib = 0, count = 0;
  while (ia < a.size() && ib < b.size()) {
    if (a.subcarrier[ia] == b.subcarrier[ib]) {
      acc += std::conj(a.value[ia]) * b.value[ib];
      ++count;
      ++ia;
      ++ib;
    } else if (a.subcarrier[ia] < b.subcarrier[ib]) {
      ++ia;
    } else {
      ++ib;
    }
  }
  if (count == 0) {
    throw ValidationError("estimate_hop_phase_offset: hops share no subcarriers");
  }
  if (std::abs(acc) == 0.0) {
    throw ValidationError("estimate_hop_phase_offset: zero-energy overlap");
  }
  double ang = std::arg(acc);  // [-pi, pi]
  if (ang <= -kPi) ang += 2.0 * kPi;
  return ang;
}

/// Reconstruct the wideband estimate from sequentially received hops: hop 0
/// is the phase reference, later hops are de-rotated by the chained pairwise
/// offsets, and overlapping subcarriers are averaged after correction.
inline ChannelEstimate stitch_hops(std::span<const ChannelEstimate> hops,
                                   const HopPlan& plan) {
  validate_hop_plan(plan);
  if (hops.empty()) throw ValidationError("stitch_hops: no hops");
  if (hops.size() == 1) {
    ChannelEstimate single = hops[0];
    single.validate();
    return single;
  }
  // order by first subcarrier so chaining walks the band
  std::vector<std::size_t> order(hops.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    return hops[l].subcarrier.front() < hops[r].subcarrier.front();
  });

  std::map<int, std::pair<std::complex<double>, int>> merged;
  double cumulative = 0.0;
  const double scs = hops[order[0]].scs_hz;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const ChannelEstimate& hop = hops[order[k]];
    hop.validate();
    if (hop.scs_hz != scs) {
      throw ValidationError("stitch_hops: mixed subcarrier spacings");
    }
    if (k > 0) {
      cumulative += estimate_hop_phase_offset(hops[order[k - 1]], hop);
    }
    const std::complex<double> derot(std::cos(-cumulative),
                                     std::sin(-cumulative));
    for (std::size_t i = 0; i < hop.size(); ++i) {
      auto& slot = merged[hop.subcarrier[i]];
      slot.first += hop.value[i] * derot;
      slot.second += 1;
    }
  }
  ChannelEstimate out;
  out.scs_hz = scs;
  for (const auto& [sc, acc] : merged) {
    out.subcarrier.push_back(sc);
    out.value.push_back(acc.first / static_cast<double>(acc.second));
  }
  // coverage check against the plan
  const int base = out.subcarrier.front();
  const int expected = plan.total_bandwidth_prb * kSubcarriersPerPrb;
  if (static_cast<int>(out.size()) != expected ||
      out.subcarrier.back() - base + 1 != expected) {
    throw ValidationError("stitch_hops: hops leave a coverage gap in the band");
  }
  return out;
}

}  // namespace nrpos
