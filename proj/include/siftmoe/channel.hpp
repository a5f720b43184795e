/* Copyright 2026 The siftmoe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace siftmoe {

/// Converts a power level in dBm to Watts. Config values are ingested through
/// this; everything inside the library works in Watts and W/Hz.
inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

namespace channel {

/// Large-scale parameters of the link between the user and one helper.
struct LinkParams {
  double distance_m = 1.0;
  double path_loss_exp = 4.0;
  double antenna_gain_ul = 1.0;
  double antenna_gain_dl = 1.0;
  double bandwidth_hz = 1e6;
  double noise_psd_w_per_hz = 1e-20;
  double tx_power_helper_w = 1.0;

  void validate() const {
    if (!(distance_m > 0 && antenna_gain_ul > 0 && antenna_gain_dl > 0 && bandwidth_hz > 0 &&
          noise_psd_w_per_hz > 0 && tx_power_helper_w > 0)) {
      throw std::invalid_argument("LinkParams: all fields must be strictly positive");
    }
    if (!(path_loss_exp >= 2.0)) {
      throw std::invalid_argument("LinkParams: path_loss_exp must be >= 2");
    }
  }

  double path_gain() const { return std::pow(distance_m, -path_loss_exp); }
  double noise_power_w() const { return noise_psd_w_per_hz * bandwidth_hz; }
};

struct Deterministic {
  double value = 1.0;
};

/// Gamma fading in shape/mean form; the scale is mean / shape.
struct GammaFading {
  double shape = 2.0;
  double mean = 1.0;
};

struct FadingModel {
  std::variant<Deterministic, GammaFading> kind = Deterministic{};
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (const auto* d = std::get_if<Deterministic>(&kind)) {
      if (!(d->value > 0)) throw std::invalid_argument("FadingModel: deterministic value must be > 0");
    } else {
      const auto& g = std::get<GammaFading>(kind);
      if (!(g.mean > 0)) throw std::invalid_argument("FadingModel: gamma mean must be > 0");
      if (!(g.shape > 1)) throw std::domain_error("divergent inverse moment: gamma shape must be > 1");
    }
  }

  double mean() const {
    if (const auto* d = std::get_if<Deterministic>(&kind)) return d->value;
    return std::get<GammaFading>(kind).mean;
  }

  bool is_deterministic() const { return std::holds_alternative<Deterministic>(kind); }
};

/// splitmix64 finalizer, used to derive independent per-(trial, layer, node)
/// seeds from one scenario seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  std::uint64_t s = mix_seed(base);
  s = mix_seed(s ^ a);
  s = mix_seed(s ^ (b + 0x632be59bd9b4e019ULL));
  s = mix_seed(s ^ (c + 0x8cb92ba72f3d8dd7ULL));
  return s;
}

/// One RNG stream of fading draws. A stream is owned by a single thread.
class FadingStream {
 public:
  explicit FadingStream(const FadingModel& model) : model_(model), rng_(model.rng_seed) {
    model_.validate();
  }

  FadingStream(const FadingModel& model, std::uint64_t seed) : model_(model), rng_(seed) {
    model_.validate();
  }

  double next() {
    if (const auto* d = std::get_if<Deterministic>(&model_.kind)) return d->value;
    const auto& g = std::get<GammaFading>(model_.kind);
    std::gamma_distribution<double> dist(g.shape, g.mean / g.shape);
    double h = dist(rng_);
    // A zero draw is possible only through underflow; keep the value positive.
    while (!(h > 0)) h = dist(rng_);
    return h;
  }

  std::vector<double> take(std::size_t count) {
    std::vector<double> out(count);
    for (auto& h : out) h = next();
    return out;
  }

 private:
  FadingModel model_;
  std::mt19937_64 rng_;
};

inline std::vector<double> sample_fading(const FadingModel& model, std::size_t count) {
  if (count == 0) throw std::invalid_argument("sample_fading: count must be >= 1");
  FadingStream stream(model);
  return stream.take(count);
}

/// E[1/h]: 1/v for deterministic fading, 1/(theta (k - 1)) for Gamma(k, theta).
inline double expected_inverse_fading(const FadingModel& model) {
  model.validate();
  if (const auto* d = std::get_if<Deterministic>(&model.kind)) return 1.0 / d->value;
  const auto& g = std::get<GammaFading>(model.kind);
  const double scale = g.mean / g.shape;
  return 1.0 / (scale * (g.shape - 1.0));
}

inline double snr_to_rate(double bandwidth_hz, double snr) {
  return bandwidth_hz * std::log2(1.0 + snr);
}

inline double uplink_rate(const LinkParams& link, double tx_power_w, double fading) {
  if (tx_power_w < 0) throw std::invalid_argument("uplink_rate: negative transmit power");
  if (!(fading > 0)) throw std::invalid_argument("uplink_rate: fading must be > 0");
  const double snr = tx_power_w * link.path_gain() * link.antenna_gain_ul * fading / link.noise_power_w();
  return snr_to_rate(link.bandwidth_hz, snr);
}

inline double downlink_rate(const LinkParams& link, double fading) {
  if (!(fading > 0)) throw std::invalid_argument("downlink_rate: fading must be > 0");
  const double snr =
      link.tx_power_helper_w * link.path_gain() * link.antenna_gain_dl * fading / link.noise_power_w();
  return snr_to_rate(link.bandwidth_hz, snr);
}

/// Energy the user spends pushing `bits` to the helper over `duration_s` at
/// the rate-matching transmit power: (2^{bits/(B t)} - 1) N0 B t / (d^-a G h).
inline double uplink_energy(const LinkParams& link, double fading, double bits, double duration_s) {
  if (!(duration_s > 0)) throw std::invalid_argument("uplink_energy: duration must be > 0");
  if (!(fading > 0)) throw std::invalid_argument("uplink_energy: fading must be > 0");
  if (bits < 0) throw std::invalid_argument("uplink_energy: negative bit count");
  if (bits == 0) return 0.0;
  const double spectral = bits / (link.bandwidth_hz * duration_s);
  const double growth = std::expm1(spectral * std::log(2.0));
  return growth * link.noise_power_w() * duration_s / (link.path_gain() * link.antenna_gain_ul * fading);
}

/// Transmit power that achieves `bits` over `duration_s`.
inline double uplink_power(const LinkParams& link, double fading, double bits, double duration_s) {
  return uplink_energy(link, fading, bits, duration_s) / duration_s;
}

}  // namespace channel
}  // namespace siftmoe
