#pragma once
#include <algorithm>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "nrpos/channel.hpp"
#include "nrpos/errors.hpp"
#include "nrpos/resource_grid.hpp"

namespace nrpos {

/// Two or three intra-band contiguous resources whose criteria tags matched;
/// the UE may assume phase continuity across them.
struct LinkedResourceSet {
  std::vector<ResourceConfig> members;  // sorted by start_prb
  std::string link_criteria_tag;
};

/// Link resources for bandwidth aggregation. The input must be 2 or 3
/// intra-band contiguous resource sets; members whose criteria tag equals
/// `criteria_tag` are linked. A tag mismatch yields no link (empty result),
/// not an error.
inline std::optional<LinkedResourceSet> link_resources(
    std::span<const ResourceConfig> resource_sets,
    std::string_view criteria_tag) {
  if (resource_sets.size() < 2 || resource_sets.size() > 3) {
    throw ValidationError(
        "link_resources: bandwidth aggregation takes two or three resource sets");
  }
  std::vector<ResourceConfig> members;
  for (const auto& rc : resource_sets) {
    if (rc.link_criteria == criteria_tag) members.push_back(rc);
  }
  if (members.size() < 2) return std::nullopt;
  std::sort(members.begin(), members.end(),
            [](const ResourceConfig& a, const ResourceConfig& b) {
              return a.start_prb < b.start_prb;
            });
  for (std::size_t i = 1; i < members.size(); ++i) {
    if (members[i].subcarrier_spacing_khz != members[0].subcarrier_spacing_khz) {
      throw ValidationError("link_resources: mixed subcarrier spacings");
    }
    if (members[i].start_prb !=
        members[i - 1].start_prb + members[i - 1].bandwidth_prb) {
      throw ValidationError(
          "link_resources: resources are not intra-band contiguous");
    }
  }
  LinkedResourceSet out;
  out.members = std::move(members);
  out.link_criteria_tag = std::string(criteria_tag);
  return out;
}

struct AggregationResult {
  ChannelEstimate estimate;
  /// True when phase continuity was not guaranteed: the per-CC estimates were
  /// combined as-is (there is no overlap to correct from) and timing accuracy
  /// degrades accordingly.
  bool degraded = false;
};

/// Concatenate per-CC estimates into one wideband estimate. Under the Tx-side
/// phase-continuity guarantee (single Tx chain, one antenna reference point)
/// no per-CC correction is needed; without it the combination is flagged
/// degraded. A single member is returned unchanged.
inline AggregationResult aggregate_linked(
    std::span<const ChannelEstimate> estimates,
    std::span<const ResourceConfig> members, bool phase_continuous) {
  if (estimates.empty() || estimates.size() != members.size()) {
    throw ValidationError(
        "aggregate_linked: one estimate per linked member is required");
  }
  AggregationResult out;
  if (estimates.size() == 1) {
    out.estimate = estimates[0];
    out.estimate.validate();
    out.degraded = false;
    return out;
  }
  std::vector<std::size_t> order(estimates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    return members[l].start_prb < members[r].start_prb;
  });
  ChannelEstimate agg;
  agg.scs_hz = estimates[0].scs_hz;
  int last = -1;
  for (std::size_t k : order) {
    const ChannelEstimate& e = estimates[k];
    e.validate();
    if (e.scs_hz != agg.scs_hz) {
      throw ValidationError("aggregate_linked: mixed subcarrier spacings");
    }
    for (std::size_t i = 0; i < e.size(); ++i) {
      if (e.subcarrier[i] <= last) {
        throw ValidationError("aggregate_linked: overlapping component carriers");
      }
      last = e.subcarrier[i];
      agg.subcarrier.push_back(e.subcarrier[i]);
      agg.value.push_back(e.value[i]);
    }
  }
  out.estimate = std::move(agg);
  out.degraded = !phase_continuous;
  return out;
}

/// SRS-vs-uplink collision handling. Slots listed in `busy_slots` carry
/// PUSCH/PUCCH. A collision outside a priority window drops every linked or
/// hopped SRS resource; inside the window the SRS wins and everything is
/// transmitted.
struct PriorityWindow {
  int start_slot = 0;
  int length_slots = 1;  // one of {1,2,4,6}

  bool contains(int slot) const {
    return slot >= start_slot && slot < start_slot + length_slots;
  }
};

struct SrsTransmitDecision {
  bool transmit_all = true;
  std::vector<bool> transmit;  // per resource, all equal by the drop-all rule
};

inline SrsTransmitDecision check_srs_collision(
    const std::vector<std::vector<int>>& srs_slots_per_resource,
    const std::set<int>& busy_slots,
    const std::optional<PriorityWindow>& window = {}) {
  if (window.has_value()) {
    const int len = window->length_slots;
    if (len != 1 && len != 2 && len != 4 && len != 6) {
      throw ValidationError(
          "check_srs_collision: priority window length must be 1, 2, 4 or 6 slots");
    }
  }
  bool unprotected_collision = false;
  for (const auto& slots : srs_slots_per_resource) {
    for (int slot : slots) {
      if (busy_slots.count(slot) == 0) continue;
      if (!window.has_value() || !window->contains(slot)) {
        unprotected_collision = true;
      }
    }
  }
  SrsTransmitDecision d;
  d.transmit_all = !unprotected_collision;
  d.transmit.assign(srs_slots_per_resource.size(), d.transmit_all);
  return d;
}

}  // namespace nrpos
