#pragma once
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nrpos/errors.hpp"
#include "nrpos/geometry.hpp"
#include "nrpos/rng.hpp"

namespace nrpos {

enum class NodeKind { Trp, Ue, Pru, SlAnchorUe, SlTargetUe };

inline std::string to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::Trp: return "TRP";
    case NodeKind::Ue: return "UE";
    case NodeKind::Pru: return "PRU";
    case NodeKind::SlAnchorUe: return "SL_ANCHOR_UE";
    case NodeKind::SlTargetUe: return "SL_TARGET_UE";
  }
  return "?";
}

inline NodeKind node_kind_from_string(const std::string& s) {
  if (s == "TRP") return NodeKind::Trp;
  if (s == "UE") return NodeKind::Ue;
  if (s == "PRU") return NodeKind::Pru;
  if (s == "SL_ANCHOR_UE") return NodeKind::SlAnchorUe;
  if (s == "SL_TARGET_UE") return NodeKind::SlTargetUe;
  throw ParseError("unknown node kind: " + s);
}

enum class Side { Tx, Rx };

/// One antenna panel. The phase biases model the per-panel RF chain; the
/// drift makes them time dependent (linear model).
struct AntennaPanel {
  std::string arp_id;
  Position3D offset;  // relative to the node reference point
  double tx_phase_bias_deg = 0.0;
  double rx_phase_bias_deg = 0.0;
  double drift_deg_per_s = 0.0;
};

struct Node {
  std::string node_id;
  NodeKind kind = NodeKind::Ue;
  Position3D position;
  std::vector<AntennaPanel> panels;
  double clock_offset_s = 0.0;    // clock reading = true time - offset
  double clock_drift_ppm = 0.0;
  std::string sync_source;        // sidelink only; empty = unknown

  const AntennaPanel& panel(std::string_view arp_id) const {
    for (const auto& p : panels) {
      if (p.arp_id == arp_id) return p;
    }
    throw ValidationError("node '" + node_id + "' has no panel '" +
                          std::string(arp_id) + "'");
  }
};

/// The immutable simulation world. Construction validates every invariant;
/// afterwards the scenario is safe to share across concurrent evaluators.
class Scenario {
 public:
  Scenario(std::vector<Node> nodes,
           std::map<std::string, double> carrier_frequency_hz,
           std::uint64_t seed, bool same_oscillator = false)
      : nodes_(std::move(nodes)),
        carrier_frequency_hz_(std::move(carrier_frequency_hz)),
        seed_(seed),
        same_oscillator_(same_oscillator) {
    validate();
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      index_.emplace(nodes_[i].node_id, i);
    }
  }

  const std::vector<Node>& nodes() const { return nodes_; }

  const Node& node(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) {
      throw ValidationError("unknown node id: " + std::string(id));
    }
    return nodes_[it->second];
  }

  bool has_node(std::string_view id) const {
    return index_.count(std::string(id)) > 0;
  }

  double carrier_frequency_hz(std::string_view pfl) const {
    auto it = carrier_frequency_hz_.find(std::string(pfl));
    if (it == carrier_frequency_hz_.end()) {
      throw ValidationError("unknown positioning frequency layer: " +
                            std::string(pfl));
    }
    return it->second;
  }

  double wavelength_m(std::string_view pfl) const {
    return wavelength(carrier_frequency_hz(pfl));
  }

  const std::map<std::string, double>& carrier_frequencies() const {
    return carrier_frequency_hz_;
  }

  std::uint64_t seed() const { return seed_; }

  /// True when UE/gNB local-oscillator sharing is declared for the scenario,
  /// i.e. each node's Tx and Rx chains derive from one oscillator. Required
  /// by the RTT-like carrier phase combination.
  bool same_oscillator() const { return same_oscillator_; }

  std::vector<std::string> node_ids_of_kind(NodeKind kind) const {
    std::vector<std::string> out;
    for (const auto& n : nodes_) {
      if (n.kind == kind) out.push_back(n.node_id);
    }
    return out;
  }

  /// Canonical serialization (keys sorted by nlohmann::json); identical
  /// scenarios dump to identical bytes.
  nlohmann::json to_json() const;

 private:
  void validate() const {
    if (nodes_.empty()) throw ValidationError("scenario has no nodes");
    if (carrier_frequency_hz_.empty()) {
      throw ValidationError("scenario declares no carrier frequencies");
    }
    for (const auto& [pfl, f] : carrier_frequency_hz_) {
      if (!(f > 0.0)) {
        throw ValidationError("carrier frequency for '" + pfl +
                              "' must be positive");
      }
    }
    std::map<std::string, int> seen;
    for (const auto& n : nodes_) {
      if (++seen[n.node_id] > 1) {
        throw ValidationError("duplicate node id: " + n.node_id);
      }
      if (!n.position.finite()) {
        throw ValidationError("node '" + n.node_id +
                              "' has non-finite position");
      }
      if (n.panels.empty()) {
        throw ValidationError("node '" + n.node_id + "' has no panels");
      }
      std::map<std::string, int> arps;
      for (const auto& p : n.panels) {
        if (++arps[p.arp_id] > 1) {
          throw ValidationError("node '" + n.node_id +
                                "' has duplicate arp_id: " + p.arp_id);
        }
        if (!p.offset.finite() || !std::isfinite(p.tx_phase_bias_deg) ||
            !std::isfinite(p.rx_phase_bias_deg) ||
            !std::isfinite(p.drift_deg_per_s)) {
          throw ValidationError("node '" + n.node_id + "' panel '" + p.arp_id +
                                "' has non-finite parameters");
        }
      }
      if (!std::isfinite(n.clock_offset_s) ||
          !std::isfinite(n.clock_drift_ppm)) {
        throw ValidationError("node '" + n.node_id +
                              "' has non-finite clock parameters");
      }
    }
  }

  std::vector<Node> nodes_;
  std::map<std::string, double> carrier_frequency_hz_;
  std::uint64_t seed_;
  bool same_oscillator_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

inline Position3D position_from_json(const nlohmann::json& j,
                                     const std::string& where) {
  if (!j.is_array() || j.size() != 3) {
    throw ParseError(where + ": position must be a 3-element array");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace detail

/// Build the immutable scenario from its JSON description. Top-level keys:
/// `carrier_frequencies` (object: pfl id -> Hz), `nodes`, `seed`, and the
/// optional `same_oscillator` flag.
inline Scenario build_scenario(const nlohmann::json& doc) {
  try {
    if (!doc.is_object()) throw ParseError("scenario document must be an object");
    if (!doc.contains("carrier_frequencies") || !doc.contains("nodes")) {
      throw ParseError(
          "scenario document needs 'carrier_frequencies' and 'nodes'");
    }
    std::map<std::string, double> freqs;
    for (const auto& [pfl, f] : doc.at("carrier_frequencies").items()) {
      freqs[pfl] = f.get<double>();
    }
    std::vector<Node> nodes;
    for (const auto& jn : doc.at("nodes")) {
      Node n;
      n.node_id = jn.at("id").get<std::string>();
      n.kind = node_kind_from_string(jn.at("kind").get<std::string>());
      n.position = detail::position_from_json(jn.at("position"), n.node_id);
      if (jn.contains("panels")) {
        for (const auto& jp : jn.at("panels")) {
          AntennaPanel p;
          p.arp_id = jp.at("arp_id").get<std::string>();
          if (jp.contains("offset")) {
            p.offset = detail::position_from_json(jp.at("offset"), n.node_id);
          }
          p.tx_phase_bias_deg = jp.value("tx_bias_deg", 0.0);
          p.rx_phase_bias_deg = jp.value("rx_bias_deg", 0.0);
          p.drift_deg_per_s = jp.value("drift_deg_per_s", 0.0);
          n.panels.push_back(std::move(p));
        }
      }
      if (n.panels.empty()) {
        // a default zero-bias panel keeps small documents small
        n.panels.push_back(AntennaPanel{"arp0", {}, 0.0, 0.0, 0.0});
      }
      n.clock_offset_s = jn.value("clock_offset_s", 0.0);
      n.clock_drift_ppm = jn.value("clock_drift_ppm", 0.0);
      n.sync_source = jn.value("sync_source", std::string{});
      nodes.push_back(std::move(n));
    }
    const std::uint64_t seed = doc.value("seed", std::uint64_t{0});
    const bool same_osc = doc.value("same_oscillator", false);
    return Scenario(std::move(nodes), std::move(freqs), seed, same_osc);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scenario document: ") + e.what());
  }
}

inline Scenario build_scenario(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scenario document: ") + e.what());
  }
  return build_scenario(doc);
}

inline nlohmann::json Scenario::to_json() const {
  nlohmann::json doc;
  doc["seed"] = seed_;
  doc["same_oscillator"] = same_oscillator_;
  doc["carrier_frequencies"] = carrier_frequency_hz_;
  nlohmann::json jnodes = nlohmann::json::array();
  for (const auto& n : nodes_) {
    nlohmann::json jn;
    jn["id"] = n.node_id;
    jn["kind"] = to_string(n.kind);
    jn["position"] = {n.position.x, n.position.y, n.position.z};
    nlohmann::json jps = nlohmann::json::array();
    for (const auto& p : n.panels) {
      jps.push_back({{"arp_id", p.arp_id},
                     {"offset", {p.offset.x, p.offset.y, p.offset.z}},
                     {"tx_bias_deg", p.tx_phase_bias_deg},
                     {"rx_bias_deg", p.rx_phase_bias_deg},
                     {"drift_deg_per_s", p.drift_deg_per_s}});
    }
    jn["panels"] = jps;
    jn["clock_offset_s"] = n.clock_offset_s;
    jn["clock_drift_ppm"] = n.clock_drift_ppm;
    jn["sync_source"] = n.sync_source;
    jnodes.push_back(std::move(jn));
  }
  doc["nodes"] = jnodes;
  return doc;
}

/// Instantaneous phase bias of one panel side, degrees, unwrapped:
/// base + drift * t. Wrapping is the observable's job, not the bias model's.
inline double sample_phase_bias(const Node& node, std::string_view arp_id,
                                Side side, double time_s) {
  const AntennaPanel& p = node.panel(arp_id);
  const double base =
      side == Side::Tx ? p.tx_phase_bias_deg : p.rx_phase_bias_deg;
  return base + p.drift_deg_per_s * time_s;
}

}  // namespace nrpos
