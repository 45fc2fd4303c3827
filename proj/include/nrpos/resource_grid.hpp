#pragma once
#include <algorithm>
#include <complex>
#include <set>
#include <string>
#include <vector>

#include "nrpos/angles.hpp"
#include "nrpos/errors.hpp"
#include "nrpos/rng.hpp"

namespace nrpos {

inline constexpr int kSubcarriersPerPrb = 12;

enum class FrequencyRange { Fr1, Fr2 };

/// Frequency-domain layout of one PRS/SRS resource: a comb of the given size
/// staggered across symbols so that the union of per-symbol offsets covers
/// every comb offset (which lets a receiver collapse the symbols into one
/// comb-1 equivalent).
struct ResourceConfig {
  int comb_size = 1;          // {1,2,4,6} (+12 for DL PRS)
  int num_symbols = 1;        // 1..12 (sidelink: 1..8)
  int bandwidth_prb = 1;
  int start_prb = 0;
  int subcarrier_spacing_khz = 30;
  std::string pfl_or_cc_id;
  std::vector<int> re_offsets;  // per-symbol comb offset; default canonical
  std::string link_criteria;    // opaque matching tag for BW aggregation
  bool sidelink = false;
  FrequencyRange fr = FrequencyRange::Fr1;

  int num_subcarriers() const { return bandwidth_prb * kSubcarriersPerPrb; }
  int first_subcarrier() const { return start_prb * kSubcarriersPerPrb; }
  double scs_hz() const { return subcarrier_spacing_khz * 1e3; }
};

namespace detail {

/// Canonical stagger orders (relative RE offset per symbol).
inline std::vector<int> default_re_offsets(int comb_size, int num_symbols) {
  static const std::vector<int> comb2 = {0, 1};
  static const std::vector<int> comb4 = {0, 2, 1, 3};
  static const std::vector<int> comb6 = {0, 3, 1, 4, 2, 5};
  static const std::vector<int> comb12 = {0, 6, 3, 9, 1, 7, 4, 10, 2, 8, 5, 11};
  const std::vector<int>* base = nullptr;
  switch (comb_size) {
    case 1: return std::vector<int>(num_symbols, 0);
    case 2: base = &comb2; break;
    case 4: base = &comb4; break;
    case 6: base = &comb6; break;
    case 12: base = &comb12; break;
    default:
      throw ValidationError("ResourceConfig: unsupported comb size");
  }
  std::vector<int> out(num_symbols);
  for (int l = 0; l < num_symbols; ++l) out[l] = (*base)[l % comb_size];
  return out;
}

}  // namespace detail

inline void validate_resource_config(ResourceConfig& cfg) {
  const bool comb_ok = cfg.comb_size == 1 || cfg.comb_size == 2 ||
                       cfg.comb_size == 4 || cfg.comb_size == 6 ||
                       (!cfg.sidelink && cfg.comb_size == 12);
  if (!comb_ok) {
    throw ValidationError("ResourceConfig: invalid comb size");
  }
  const int max_symbols = cfg.sidelink ? 8 : 12;
  if (cfg.num_symbols < 1 || cfg.num_symbols > max_symbols) {
    throw ValidationError("ResourceConfig: invalid symbol count");
  }
  if (cfg.bandwidth_prb < 1 || cfg.start_prb < 0) {
    throw ValidationError("ResourceConfig: invalid bandwidth/start");
  }
  const int s = cfg.subcarrier_spacing_khz;
  if (s != 15 && s != 30 && s != 60 && s != 120) {
    throw ValidationError("ResourceConfig: invalid subcarrier spacing");
  }
  if (cfg.sidelink) {
    const bool fr1_ok = cfg.fr == FrequencyRange::Fr1 &&
                        (s == 15 || s == 30 || s == 60);
    const bool fr2_ok = cfg.fr == FrequencyRange::Fr2 && (s == 60 || s == 120);
    if (!fr1_ok && !fr2_ok) {
      throw ValidationError(
          "ResourceConfig: sidelink SCS must be {15,30,60} kHz in FR1 or "
          "{60,120} kHz in FR2");
    }
  }
  if (cfg.re_offsets.empty()) {
    cfg.re_offsets = detail::default_re_offsets(cfg.comb_size, cfg.num_symbols);
  }
  if (static_cast<int>(cfg.re_offsets.size()) != cfg.num_symbols) {
    throw ValidationError("ResourceConfig: re_offsets size != num_symbols");
  }
  std::set<int> used;
  for (int off : cfg.re_offsets) {
    if (off < 0 || off >= cfg.comb_size) {
      throw ValidationError("ResourceConfig: re_offset outside comb");
    }
    used.insert(off);
  }
  if (cfg.num_symbols >= cfg.comb_size &&
      static_cast<int>(used.size()) != cfg.comb_size) {
    throw ValidationError(
        "ResourceConfig: pattern is not fully staggered (offsets do not "
        "cover the comb)");
  }
}

/// One resource worth of reference symbols on the grid. values[symbol][sc]
/// holds unit-modulus pseudo-random QPSK on occupied REs and zero elsewhere;
/// subcarrier index 0 is the first subcarrier of the resource band.
struct PrsGrid {
  ResourceConfig config;
  std::vector<std::vector<std::complex<double>>> values;

  bool occupied(int symbol, int subcarrier) const {
    return subcarrier % config.comb_size == config.re_offsets[symbol];
  }
};

/// Generate the staggered pseudo-random grid (unit modulus per RE,
/// deterministic for a given sequence seed).
inline PrsGrid generate_prs_grid(ResourceConfig config,
                                 std::uint64_t sequence_seed) {
  validate_resource_config(config);
  PrsGrid grid;
  grid.config = config;
  const int n_sc = config.num_subcarriers();
  auto stream = derive_stream(sequence_seed, "prs_grid");
  grid.values.assign(config.num_symbols,
                     std::vector<std::complex<double>>(n_sc, {0.0, 0.0}));
  for (int l = 0; l < config.num_symbols; ++l) {
    const int offset = config.re_offsets[l];
    for (int sc = offset; sc < n_sc; sc += config.comb_size) {
      // QPSK constellation point from two pseudo-random bits
      const std::uint64_t bits = stream.next_u64();
      const double re = (bits & 1) ? -1.0 : 1.0;
      const double im = (bits & 2) ? -1.0 : 1.0;
      grid.values[l][sc] = std::complex<double>(re, im) * (1.0 / std::sqrt(2.0));
    }
  }
  return grid;
}

/// Collapse a fully staggered grid into its comb-1 equivalent: one value per
/// subcarrier of the band, taken from the symbol that occupies it.
inline std::vector<std::complex<double>> combine_staggered(const PrsGrid& grid) {
  const int n_sc = grid.config.num_subcarriers();
  if (grid.config.num_symbols < grid.config.comb_size) {
    throw ValidationError(
        "combine_staggered: pattern does not cover all comb offsets");
  }
  std::vector<std::complex<double>> out(n_sc, {0.0, 0.0});
  for (int sc = 0; sc < n_sc; ++sc) {
    for (int l = 0; l < grid.config.num_symbols; ++l) {
      if (grid.occupied(l, sc)) {
        out[sc] = grid.values[l][sc];
        break;
      }
    }
  }
  return out;
}

}  // namespace nrpos
