#pragma once
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nrpos/angles.hpp"
#include "nrpos/errors.hpp"
#include "nrpos/fft.hpp"
#include "nrpos/rng.hpp"

namespace nrpos {

/// Frequency-domain samples over a set of occupied subcarriers. Used both for
/// transmitted reference values and for received/estimated channels; the
/// subcarrier indices live on a single virtual grid so hops and component
/// carriers can be compared and merged.
struct ChannelEstimate {
  std::vector<int> subcarrier;                // strictly increasing
  std::vector<std::complex<double>> value;
  double scs_hz = 30e3;

  std::size_t size() const { return subcarrier.size(); }

  void validate() const {
    if (subcarrier.size() != value.size()) {
      throw ValidationError("ChannelEstimate: index/value size mismatch");
    }
    for (std::size_t i = 1; i < subcarrier.size(); ++i) {
      if (subcarrier[i] <= subcarrier[i - 1]) {
        throw ValidationError(
            "ChannelEstimate: subcarrier indices must strictly increase");
      }
    }
    for (const auto& v : value) {
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
        throw ValidationError("ChannelEstimate: non-finite value");
      }
    }
  }
};

/// Propagation model: every subcarrier m picks up exp(-j 2 pi f_m tau) plus a
/// common carrier-phase rotation and (for hopped reception) a per-hop RF
/// retuning phase; optional AWGN at the given SNR assumes unit signal power
/// per subcarrier.
inline ChannelEstimate apply_channel(const ChannelEstimate& tx, double delay_s,
                                     double carrier_phase_rad,
                                     double per_hop_phase_rad,
                                     std::optional<double> snr_db,
                                     std::uint64_t seed,
                                     std::optional<double> delay_bound_s = {}) {
  tx.validate();
  const double bound =
      delay_bound_s.value_or(0.25 / tx.scs_hz);  // quarter symbol by default
  if (std::abs(delay_s) > bound) {
    throw std::invalid_argument(
        "apply_channel: delay exceeds the cyclic-prefix-equivalent bound");
  }
  ChannelEstimate rx = tx;
  const double common = carrier_phase_rad + per_hop_phase_rad;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double f = rx.subcarrier[i] * rx.scs_hz;
    const double ang = -2.0 * kPi * f * delay_s + common;
    rx.value[i] *= std::complex<double>(std::cos(ang), std::sin(ang));
  }
  if (snr_db.has_value()) {
    auto stream = derive_stream(seed, "awgn");
    const double noise_power = std::pow(10.0, -*snr_db / 10.0);
    const double sigma = std::sqrt(noise_power / 2.0);
    for (auto& v : rx.value) v += stream.complex_gaussian(sigma);
  }
  return rx;
}

/// Least-squares per-subcarrier channel estimate from a received resource and
/// its known reference values.
inline ChannelEstimate estimate_channel(const ChannelEstimate& received,
                                        const ChannelEstimate& reference) {
  received.validate();
  reference.validate();
  if (received.subcarrier != reference.subcarrier) {
    throw ValidationError("estimate_channel: subcarrier maps differ");
  }
  ChannelEstimate est = received;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double p = std::norm(reference.value[i]);
    if (p == 0.0) {
      throw ValidationError("estimate_channel: zero reference value");
    }
    est.value[i] = received.value[i] * std::conj(reference.value[i]) / p;
  }
  return est;
}

/// Time-of-arrival from a channel estimate: zero-padded inverse transform,
/// peak search on the power response, then a 3-point parabolic interpolation
/// around the peak. Returns seconds (negative values fold around zero).
inline double estimate_toa(const ChannelEstimate& est, int oversampling = 16) {
  est.validate();
  if (est.size() < 2) {
    throw std::invalid_argument("estimate_toa: need at least 2 subcarriers");
  }
  if (oversampling < 1) {
    throw std::invalid_argument("estimate_toa: oversampling must be >= 1");
  }
  const int base = est.subcarrier.front();
  const int span = est.subcarrier.back() - base + 1;
  const std::size_t n =
      next_pow2(static_cast<std::size_t>(span) *
                static_cast<std::size_t>(oversampling));
  std::vector<std::complex<double>> a(n, {0.0, 0.0});
  for (std::size_t i = 0; i < est.size(); ++i) {
    a[est.subcarrier[i] - base] = est.value[i];
  }
  fft_inplace(a, /*inverse=*/true);
  std::size_t peak = 0;
  double peak_power = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::norm(a[i]);
    if (p > peak_power) {
      peak_power = p;
      peak = i;
    }
  }
  const double pm = std::norm(a[(peak + n - 1) % n]);
  const double pp = std::norm(a[(peak + 1) % n]);
  const double denom = pm - 2.0 * peak_power + pp;
  double frac = 0.0;
  if (denom < 0.0) frac = 0.5 * (pm - pp) / denom;
  double idx = static_cast<double>(peak) + frac;
  if (idx > static_cast<double>(n) / 2.0) idx -= static_cast<double>(n);
  // time grid of the padded transform
  return idx / (static_cast<double>(n) * est.scs_hz);
}

/// CSV export, columns: subcarrier_index, re, im.
inline void write_channel_csv(const ChannelEstimate& est, std::ostream& os) {
  os << "subcarrier_index,re,im\n";
  char line[96];
  for (std::size_t i = 0; i < est.size(); ++i) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g\n", est.subcarrier[i],
                  est.value[i].real(), est.value[i].imag());
    os << line;
  }
}

inline void write_channel_csv(const ChannelEstimate& est,
                              const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  write_channel_csv(est, f);
}

inline ChannelEstimate read_channel_csv(std::istream& is, double scs_hz) {
  ChannelEstimate est;
  est.scs_hz = scs_hz;
  std::string line;
  if (!std::getline(is, line)) throw ParseError("channel csv: empty input");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    int idx;
    double re, im;
    if (!std::getline(ss, tok, ',')) throw ParseError("channel csv: bad row");
    idx = std::stoi(tok);
    if (!std::getline(ss, tok, ',')) throw ParseError("channel csv: bad row");
    re = std::stod(tok);
    if (!std::getline(ss, tok, ',')) throw ParseError("channel csv: bad row");
    im = std::stod(tok);
    est.subcarrier.push_back(idx);
    est.value.emplace_back(re, im);
  }
  est.validate();
  return est;
}

inline ChannelEstimate read_channel_csv(const std::string& path,
                                        double scs_hz) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  return read_channel_csv(f, scs_hz);
}

}  // namespace nrpos
