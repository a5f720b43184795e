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
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "siftmoe/channel.hpp"

namespace siftmoe::cost {

/// Smallest uplink window treated as usable; below it the rate term divides by ~0.
inline constexpr double kBudgetFloor = 1e-9;

/// Upper bound on any reported load capacity, keeps capacities in int range.
inline constexpr int kLoadCeiling = 1 << 28;

/// One edge node. Node 0 is the user, which computes locally; all other
/// nodes are helpers reached over `link`.
struct NodeParams {
  int node_id = 0;
  double compute_flops = 1.0;
  double load_latency_s = 0.0;
  double load_power_w = 0.0;
  double compute_power_w = 0.0;
  std::optional<channel::LinkParams> link;

  bool is_user() const { return node_id == 0; }

  void validate() const {
    if (!(compute_flops > 0)) throw std::invalid_argument("NodeParams: compute_flops must be > 0");
    if (load_latency_s < 0) throw std::invalid_argument("NodeParams: load_latency_s must be >= 0");
    if (is_user()) {
      if (load_power_w < 0 || compute_power_w < 0)
        throw std::invalid_argument("NodeParams: user powers must be >= 0");
    } else {
      if (!link) throw std::invalid_argument("NodeParams: helper " + std::to_string(node_id) + " has no link");
      link->validate();
    }
  }
};

struct ModelParams {
  double hidden_bits = 1.0;
  double flops_per_token = 1.0;
  int num_layers = 1;
  int num_experts = 1;
  int top_k = 1;
  double layer_deadline_s = 1.0;

  void validate() const {
    if (!(hidden_bits > 0 && flops_per_token > 0 && layer_deadline_s > 0))
      throw std::invalid_argument("ModelParams: bits, flops and deadline must be > 0");
    if (num_layers < 1 || num_experts < 1) throw std::invalid_argument("ModelParams: need >= 1 layer and expert");
    if (top_k < 1 || top_k > num_experts) throw std::invalid_argument("ModelParams: need 1 <= top_k <= num_experts");
  }
};

/// Fading seen by one helper link during a layer.
struct LinkFading {
  double uplink = 1.0;
  double downlink = 1.0;
};

/// Marginal energy of the d-th token on a node, d = 1..d_max.
struct MarginalCostTable {
  int node_id = 0;
  std::vector<double> costs;
  int d_max = 0;

  /// Cost of slot d (1-based).
  double cost(int d) const { return costs.at(static_cast<std::size_t>(d - 1)); }

  /// Sum of the first `load` slots, accumulated in slot order.
  double prefix(int load) const {
    double sum = 0.0;
    for (int d = 1; d <= load; ++d) sum += cost(d);
    return sum;
  }
};

inline double local_latency(const NodeParams& user, const ModelParams& model, int d_ue) {
  if (d_ue < 0) throw std::invalid_argument("local_latency: negative load");
  if (d_ue == 0) return 0.0;
  return user.load_latency_s + d_ue * model.flops_per_token / user.compute_flops;
}

inline double local_energy(const NodeParams& user, const ModelParams& model, int d_ue) {
  if (d_ue < 0) throw std::invalid_argument("local_energy: negative load");
  if (d_ue == 0) return 0.0;
  return user.load_power_w * user.load_latency_s +
         user.compute_power_w * (d_ue * model.flops_per_token / user.compute_flops);
}

/// Per-token time a helper spends after the uplink: compute plus downlink.
inline double helper_token_time(const NodeParams& helper, const ModelParams& model, double fading_dl) {
  return model.flops_per_token / helper.compute_flops +
         model.hidden_bits / channel::downlink_rate(*helper.link, fading_dl);
}

/// Uplink window left for a load of d tokens when the helper finishes exactly
/// at the deadline. Non-positive means the load does not fit.
inline double helper_time_budget(const NodeParams& helper, const ModelParams& model, double fading_dl, int d) {
  return model.layer_deadline_s - d * helper_token_time(helper, model, fading_dl);
}

/// The expert load overlaps the uplink, so the window must also cover it.
inline bool helper_load_feasible(const NodeParams& helper, const ModelParams& model, double fading_dl, int d) {
  if (d == 0) return true;
  const double budget = helper_time_budget(helper, model, fading_dl, d);
  return budget > kBudgetFloor && budget >= helper.load_latency_s;
}

inline double helper_energy(const NodeParams& helper, const ModelParams& model, LinkFading fading, int d) {
  if (d < 0) throw std::invalid_argument("helper_energy: negative load");
  if (d == 0) return 0.0;
  if (!helper_load_feasible(helper, model, fading.downlink, d))
    throw std::domain_error("load exceeds latency capacity");
  const double budget = helper_time_budget(helper, model, fading.downlink, d);
  return channel::uplink_energy(*helper.link, fading.uplink, d * model.hidden_bits, budget);
}

inline bool local_load_feasible(const NodeParams& user, const ModelParams& model, int d) {
  return local_latency(user, model, d) <= model.layer_deadline_s * (1.0 + 1e-12);
}

/// Largest load the node can finish within the layer deadline.
inline int max_load(const NodeParams& node, const ModelParams& model, double fading_dl = 1.0) {
  double per_token = 0.0;
  double fixed = 0.0;
  if (node.is_user()) {
    per_token = model.flops_per_token / node.compute_flops;
    fixed = node.load_latency_s;
  } else {
    per_token = helper_token_time(node, model, fading_dl);
    fixed = std::max(node.load_latency_s, kBudgetFloor);
  }
  const auto feasible = [&](std::int64_t d) {
    const int di = static_cast<int>(d);
    return node.is_user() ? local_load_feasible(node, model, di) : helper_load_feasible(node, model, fading_dl, di);
  };
  const double estimate = std::floor((model.layer_deadline_s - fixed) / per_token);
  if (!(estimate >= 0)) return feasible(1) ? 1 : 0;
  std::int64_t d = static_cast<std::int64_t>(std::min<double>(estimate, kLoadCeiling));
  // The estimate is off by at most one in either direction due to rounding.
  while (d > 0 && !feasible(d)) --d;
  while (d < kLoadCeiling && feasible(d + 1)) ++d;
  return static_cast<int>(d);
}

/// Differences of any load-to-energy map over loads 1..d_max. Loads whose
/// energy overflows to infinity are cut from the table.
template <typename EnergyFn>
MarginalCostTable marginal_costs_from(int node_id, int d_max, EnergyFn&& energy) {
  MarginalCostTable table;
  table.node_id = node_id;
  table.costs.reserve(static_cast<std::size_t>(d_max));
  double previous = 0.0;
  for (int d = 1; d <= d_max; ++d) {
    const double current = energy(d);
    if (!std::isfinite(current)) break;
    table.costs.push_back(current - previous);
    previous = current;
  }
  table.d_max = static_cast<int>(table.costs.size());
  return table;
}

/// Marginal costs for the node under one slow-fading draw. `load_limit`
/// truncates the table (no node ever carries more than the token count).
inline MarginalCostTable marginal_costs(const NodeParams& node, const ModelParams& model, LinkFading fading,
                                        int load_limit = kLoadCeiling) {
  const int d_max = std::min(max_load(node, model, fading.downlink), load_limit);
  if (node.is_user()) {
    MarginalCostTable table;
    table.node_id = node.node_id;
    table.d_max = d_max;
    const double per_token = node.compute_power_w * (model.flops_per_token / node.compute_flops);
    table.costs.assign(static_cast<std::size_t>(d_max), per_token);
    // The one-off expert load is charged to the first slot.
    if (d_max > 0) table.costs[0] = node.load_power_w * node.load_latency_s + per_token;
    return table;
  }
  return marginal_costs_from(node.node_id, d_max,
                             [&](int d) { return helper_energy(node, model, fading, d); });
}

}  // namespace siftmoe::cost
