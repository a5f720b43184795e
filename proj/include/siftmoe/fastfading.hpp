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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "siftmoe/channel.hpp"
#include "siftmoe/cost.hpp"

namespace siftmoe::fastfading {

/// Per-slot energy constants of one helper link: a slot carrying g bits at
/// fading h costs c (2^{a g} - 1) / h.
struct SlotParams {
  double a = 1.0;
  double c = 1.0;
  int num_slots = 1;
  double slot_length_s = 1.0;
};

/// Splits an uplink window of `window_s` into Q = ceil(window/tau) equal
/// slots. Slots are shrunk to window/Q so the last one ends at the deadline.
inline SlotParams slot_params(const channel::LinkParams& link, double window_s, double tau) {
  if (!(tau > 0)) throw std::invalid_argument("slot_params: slot length must be > 0");
  if (!(window_s > 0)) throw std::invalid_argument("slot_params: uplink window must be > 0");
  SlotParams p;
  p.num_slots = std::max(1, static_cast<int>(std::ceil(window_s / tau - 1e-9)));
  p.slot_length_s = window_s / p.num_slots;
  p.a = 1.0 / (link.bandwidth_hz * p.slot_length_s);
  p.c = link.noise_power_w() * p.slot_length_s / (link.path_gain() * link.antenna_gain_ul);
  return p;
}

enum class Clamp { kClamped, kUnclamped };

struct SlotPlan {
  int helper_id = 0;
  double slot_length_s = 0.0;
  int num_slots = 0;
  std::vector<double> bits_per_slot;
  std::vector<double> realized_fadings;
  std::vector<double> energy_j;

  double total_energy() const { return std::accumulate(energy_j.begin(), energy_j.end(), 0.0); }
  double total_bits() const { return std::accumulate(bits_per_slot.begin(), bits_per_slot.end(), 0.0); }
};

inline double slot_energy(const SlotParams& p, double bits, double fading) {
  if (bits == 0) return 0.0;
  return p.c * std::expm1(p.a * bits * std::log(2.0)) / fading;
}

/// Uplink window a helper gets under fast fading. The downlink is not slot
/// scheduled, so its rate is evaluated at the mean fading.
inline double fast_time_budget(const cost::NodeParams& helper, const cost::ModelParams& model,
                               const channel::FadingModel& fading, int d) {
  return cost::helper_time_budget(helper, model, fading.mean(), d);
}

/// E[1/h] (2^{bD/(B T)} - 1) N0 B T / (d^-a G): the non-adaptive energy of
/// pushing D tokens, used as a deterministic stand-in for selection.
inline double surrogate_energy(const cost::NodeParams& helper, const cost::ModelParams& model,
                               const channel::FadingModel& fading, int d) {
  if (d < 0) throw std::invalid_argument("surrogate_energy: negative load");
  if (d == 0) return 0.0;
  if (!cost::helper_load_feasible(helper, model, fading.mean(), d))
    throw std::domain_error("load exceeds latency capacity");
  const double budget = fast_time_budget(helper, model, fading, d);
  return channel::expected_inverse_fading(fading) *
         channel::uplink_energy(*helper.link, 1.0, d * model.hidden_bits, budget);
}

inline cost::MarginalCostTable surrogate_marginal_costs(const cost::NodeParams& node, const cost::ModelParams& model,
                                                        const channel::FadingModel& fading,
                                                        int load_limit = cost::kLoadCeiling) {
  if (node.is_user()) return cost::marginal_costs(node, model, {}, load_limit);
  const int d_max = std::min(cost::max_load(node, model, fading.mean()), load_limit);
  return cost::marginal_costs_from(node.node_id, d_max,
                                   [&](int d) { return surrogate_energy(node, model, fading, d); });
}

/// Bits to send in the current slot given the remaining payload, the fading
/// observed now and E[1/h] of every later slot:
///   (1 / (R a)) [a beta + sum_j log2(h_now E_j)],  R = remaining slots.
/// With one slot left everything goes. Clamped mode keeps the result in
/// [0, beta].
inline double optimal_bits_slot(double a, double beta_remaining, double h_now,
                                std::span<const double> future_inv_means, Clamp clamp = Clamp::kClamped) {
  if (!(h_now > 0)) throw std::invalid_argument("optimal_bits_slot: fading must be > 0");
  if (future_inv_means.empty()) return beta_remaining;
  const double remaining = static_cast<double>(future_inv_means.size() + 1);
  double log_sum = 0.0;
  for (double e : future_inv_means) log_sum += std::log2(h_now * e);
  const double bits = (a * beta_remaining + log_sum) / (remaining * a);
  if (clamp == Clamp::kUnclamped) return bits;
  return std::clamp(bits, 0.0, std::max(beta_remaining, 0.0));
}

/// Applies the slot rule causally against a realized fading sequence.
/// `inv_means[t]` is E[1/h] of slot t (only later slots are consulted).
inline SlotPlan run_policy(const SlotParams& p, std::span<const double> fadings, std::span<const double> inv_means,
                           double total_bits, Clamp clamp = Clamp::kClamped, int helper_id = 0) {
  const auto q = static_cast<std::size_t>(p.num_slots);
  if (fadings.size() < q || inv_means.size() < q)
    throw std::invalid_argument("run_policy: fading stream shorter than slot count");
  SlotPlan plan;
  plan.helper_id = helper_id;
  plan.slot_length_s = p.slot_length_s;
  plan.num_slots = p.num_slots;
  double remaining = total_bits;
  for (std::size_t t = 0; t < q; ++t) {
    const double bits =
        total_bits == 0 ? 0.0 : optimal_bits_slot(p.a, remaining, fadings[t], inv_means.subspan(t + 1, q - t - 1), clamp);
    remaining -= bits;
    plan.bits_per_slot.push_back(bits);
    plan.realized_fadings.push_back(fadings[t]);
    // Unclamped mode may schedule negative bits; energy follows the formula.
    plan.energy_j.push_back(slot_energy(p, bits, fadings[t]));
  }
  return plan;
}

/// Convenience form for i.i.d. slots sharing one E[1/h].
inline SlotPlan run_policy(const SlotParams& p, std::span<const double> fadings, double inv_mean, double total_bits,
                           Clamp clamp = Clamp::kClamped, int helper_id = 0) {
  const std::vector<double> inv(static_cast<std::size_t>(p.num_slots), inv_mean);
  return run_policy(p, fadings, inv, total_bits, clamp, helper_id);
}

/// Closed-form expected energy of the slot rule given the first slot's
/// fading h1 and E[1/h] of slots 2..Q:
///   c [Q 2^{aD/Q} ((1/h1) prod E_t)^{1/Q} - (1/h1 + sum E_t)].
inline double expected_policy_energy(double c, double a, int num_slots, double h1,
                                     std::span<const double> later_inv_means, double total_bits) {
  if (num_slots < 1) throw std::invalid_argument("expected_policy_energy: need at least one slot");
  if (later_inv_means.size() + 1 < static_cast<std::size_t>(num_slots))
    throw std::invalid_argument("expected_policy_energy: missing inverse-fading means");
  const double q = num_slots;
  double log_prod = -std::log(h1);
  double sum = 1.0 / h1;
  for (int t = 0; t + 1 < num_slots; ++t) {
    log_prod += std::log(later_inv_means[static_cast<std::size_t>(t)]);
    sum += later_inv_means[static_cast<std::size_t>(t)];
  }
  const double lead = q * std::exp2(a * total_bits / q) * std::exp(log_prod / q);
  return c * (lead - sum);
}

inline SlotPlan uniform_baseline(const SlotParams& p, std::span<const double> fadings, double total_bits,
                                 int helper_id = 0) {
  const auto q = static_cast<std::size_t>(p.num_slots);
  if (fadings.size() < q) throw std::invalid_argument("uniform_baseline: fading stream shorter than slot count");
  SlotPlan plan;
  plan.helper_id = helper_id;
  plan.slot_length_s = p.slot_length_s;
  plan.num_slots = p.num_slots;
  const double bits = total_bits / static_cast<double>(q);
  for (std::size_t t = 0; t < q; ++t) {
    plan.bits_per_slot.push_back(bits);
    plan.realized_fadings.push_back(fadings[t]);
    plan.energy_j.push_back(slot_energy(p, bits, fadings[t]));
  }
  return plan;
}

}  // namespace siftmoe::fastfading
