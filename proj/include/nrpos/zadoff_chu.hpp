#pragma once
#include <algorithm>
#include <complex>
#include <cstdint>
#include <numeric>
#include <set>
#include <vector>

#include "nrpos/angles.hpp"
#include "nrpos/channel.hpp"
#include "nrpos/errors.hpp"
#include "nrpos/resource_grid.hpp"

namespace nrpos {

/// Segmentation of a wideband resource into sequential narrowband hops with
/// re-tuning gaps. Adjacent hops share frequency content so the receiver can
/// estimate the retuning phase jump: overlap_prb resource blocks for DL PRS
/// hops, overlap_elements sequence elements for UL ZC hops.
struct HopPlan {
  int hop_bandwidth_prb = 24;
  int total_bandwidth_prb = 104;
  int overlap_prb = 4;        // DL hop overlap
  int overlap_elements = 24;  // UL ZC element overlap (multiple of 12)
  int symbols_per_hop = 2;
  int retune_symbols = 2;
  int duration_symbols = 0;   // 0 = minimal duration
  std::vector<int> hop_order;  // start PRB of each hop

  int num_hops() const { return static_cast<int>(hop_order.size()); }

  /// Symbols consumed by the timeline: hops plus retuning between them.
  int timeline_symbols() const {
    const int n = num_hops();
    if (n == 0) return 0;
    return n * symbols_per_hop + (n - 1) * retune_symbols;
  }

  /// First symbol of each hop on the timeline.
  std::vector<int> hop_start_symbols() const {
    std::vector<int> out;
    for (int h = 0; h < num_hops(); ++h) {
      out.push_back(h * (symbols_per_hop + retune_symbols));
    }
    return out;
  }
};

inline void validate_hop_plan(const HopPlan& plan) {
  if (plan.hop_bandwidth_prb < 1 || plan.total_bandwidth_prb < 1) {
    throw ValidationError("HopPlan: invalid bandwidths");
  }
  if (plan.hop_order.empty()) throw ValidationError("HopPlan: no hops");
  if (plan.overlap_prb < 0 || plan.overlap_prb >= plan.hop_bandwidth_prb) {
    throw ValidationError("HopPlan: overlap must be in [0, hop bandwidth)");
  }
  if (plan.symbols_per_hop < 1 || plan.retune_symbols < 0) {
    throw ValidationError("HopPlan: invalid timeline parameters");
  }
  // coverage: union of hops must cover the whole band, adjacent hops must
  // overlap by the stated amount
  std::vector<int> starts = plan.hop_order;
  std::sort(starts.begin(), starts.end());
  if (starts.front() != 0) throw ValidationError("HopPlan: band must start at PRB 0");
  for (std::size_t i = 1; i < starts.size(); ++i) {
    const int expected = starts[i - 1] + plan.hop_bandwidth_prb - plan.overlap_prb;
    if (starts[i] != expected) {
      throw ValidationError("HopPlan: adjacent hops must overlap by overlap_prb");
    }
  }
  if (starts.back() + plan.hop_bandwidth_prb != plan.total_bandwidth_prb) {
    throw ValidationError("HopPlan: hops do not cover the total bandwidth");
  }
  if (plan.duration_symbols > 0 &&
      plan.timeline_symbols() > plan.duration_symbols) {
    throw ValidationError("HopPlan: timeline does not fit the resource duration");
  }
}

/// Uniform plan: hops stride by (hop - overlap) PRBs starting at 0.
inline HopPlan make_uniform_hop_plan(int total_prb, int hop_prb,
                                     int overlap_prb) {
  HopPlan plan;
  plan.total_bandwidth_prb = total_prb;
  plan.hop_bandwidth_prb = hop_prb;
  plan.overlap_prb = overlap_prb;
  plan.overlap_elements = overlap_prb * kSubcarriersPerPrb;
  const int stride = hop_prb - overlap_prb;
  if (stride <= 0) throw ValidationError("make_uniform_hop_plan: overlap too large");
  if ((total_prb - hop_prb) % stride != 0) {
    throw ValidationError(
        "make_uniform_hop_plan: band is not tileable by these hops");
  }
  for (int s = 0; s + hop_prb <= total_prb; s += stride) plan.hop_order.push_back(s);
  plan.duration_symbols = plan.timeline_symbols();
  validate_hop_plan(plan);
  return plan;
}

/// The full virtual-band ZC sequence: element n = exp(-j pi u n(n+1) / N_ZC)
/// mapped to virtual subcarrier n.
inline std::vector<std::complex<double>> zc_sequence(int root_u, int n_zc,
                                                     int length) {
  if (n_zc < 2 || root_u <= 0 || root_u >= n_zc ||
      std::gcd(root_u, n_zc) != 1) {
    throw ValidationError("zc_sequence: root must satisfy 0<u<N, gcd(u,N)=1");
  }
  if (length > n_zc) {
    throw ValidationError("zc_sequence: N_ZC must cover all occupied subcarriers");
  }
  std::vector<std::complex<double>> seq(length);
  for (int n = 0; n < length; ++n) {
    // reduce the quadratic exponent mod 2N before going to double
    const long long q = (static_cast<long long>(n) * (n + 1)) % (2LL * n_zc);
    const double phase = -kPi * static_cast<double>(root_u) *
                         static_cast<double>(q) / static_cast<double>(n_zc);
    seq[n] = {std::cos(phase), std::sin(phase)};
  }
  return seq;
}

/// Per-hop segments of one virtual full-band ZC sequence. Each hop transmits
/// its slice of the sequence; adjacent hops share exactly overlap_elements
/// elements at identical virtual positions.
inline std::vector<ChannelEstimate> generate_srs_zc(const HopPlan& plan,
                                                    int root_u, int n_zc,
                                                    double scs_hz = 30e3) {
  validate_hop_plan(plan);
  if (plan.overlap_elements != plan.overlap_prb * kSubcarriersPerPrb) {
    throw ValidationError(
        "generate_srs_zc: overlap_elements must equal overlap_prb * 12");
  }
  const int total = plan.total_bandwidth_prb * kSubcarriersPerPrb;
  const auto seq = zc_sequence(root_u, n_zc, total);
  std::vector<ChannelEstimate> hops;
  for (int start_prb : plan.hop_order) {
    ChannelEstimate h;
    h.scs_hz = scs_hz;
    const int first = start_prb * kSubcarriersPerPrb;
    const int count = plan.hop_bandwidth_prb * kSubcarriersPerPrb;
    for (int n = first; n < first + count; ++n) {
      h.subcarrier.push_back(n);
      h.value.push_back(seq[n]);
    }
    hops.push_back(std::move(h));
  }
  return hops;
}

}  // namespace nrpos
