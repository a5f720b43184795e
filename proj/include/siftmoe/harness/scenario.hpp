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
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "siftmoe/channel.hpp"
#include "siftmoe/cost.hpp"
#include "siftmoe/error_budget.hpp"

namespace siftmoe::harness {

enum class Regime { kSlow, kFast };

/// How the per-layer deviation budget eta is obtained: a fixed per-layer cap,
/// or the final-output budget split through the cross-layer bound.
enum class BudgetMode { kDirectCap, kFinalBudget };

/// For the final-budget mode, which earlier-layer deviations feed the
/// intermediate-cap branch.
enum class KappaHistory { kRealized, kBudgeted };

/// Knobs of the synthetic routing-statistics generator.
struct TraceGenSpec {
  int tokens = 8;
  double gating_concentration = 1.0;
  double norm_lo = 1.0;
  double norm_hi = 2.0;
  double cos_base = 0.6;
  double cos_jitter = 0.3;
  // Dirichlet concentration of per-layer expert popularity; small values
  // concentrate Top-K routing on a few experts.
  double popularity_concentration = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (tokens < 0) throw std::invalid_argument("TraceGenSpec: tokens must be >= 0");
    if (!(gating_concentration > 0 && popularity_concentration > 0))
      throw std::invalid_argument("TraceGenSpec: concentrations must be > 0");
    if (!(norm_lo >= 0 && norm_hi >= norm_lo)) throw std::invalid_argument("TraceGenSpec: need 0 <= norm_lo <= norm_hi");
    if (cos_jitter < 0) throw std::invalid_argument("TraceGenSpec: cos_jitter must be >= 0");
  }
};

struct Scenario {
  std::string name = "custom";
  std::vector<cost::NodeParams> nodes;
  cost::ModelParams model;
  error_budget::ModelConstants constants;
  error_budget::BudgetSpec budget;
  BudgetMode budget_mode = BudgetMode::kDirectCap;
  KappaHistory kappa_history = KappaHistory::kRealized;
  double layer_cap = 0.0;
  channel::FadingModel fading;
  Regime regime = Regime::kSlow;
  double slot_s = 0.01;
  // Transmit power ceiling of the user radio; Practical Top-K fails links
  // that would need more.
  double user_max_power_w = 0.2;
  int trials = 1;
  std::uint64_t seed = 1;
  TraceGenSpec traces;
  // When non-empty, every trial uses these traces instead of generating.
  std::vector<error_budget::LayerTrace> fixed_traces;

  int num_nodes() const { return static_cast<int>(nodes.size()); }

  void validate() const {
    model.validate();
    if (num_nodes() != model.num_experts)
      throw std::invalid_argument("Scenario: node count must equal expert count");
    int users = 0;
    for (std::size_t v = 0; v < nodes.size(); ++v) {
      nodes[v].validate();
      if (nodes[v].node_id != static_cast<int>(v)) throw std::invalid_argument("Scenario: node ids must be 0..N-1");
      if (nodes[v].is_user()) ++users;
    }
    if (users != 1) throw std::invalid_argument("Scenario: exactly one user node required");
    constants.validate();
    if (constants.num_layers() != model.num_layers)
      throw std::invalid_argument("Scenario: model constants must cover every layer");
    if (budget_mode == BudgetMode::kFinalBudget) {
      budget.validate();
      if (static_cast<int>(budget.theta_alloc.size()) != model.num_layers)
        throw std::invalid_argument("Scenario: budget allocation must cover every layer");
    }
    fading.validate();
    if (regime == Regime::kFast && !(slot_s > 0)) throw std::invalid_argument("Scenario: fast fading needs slot_s > 0");
    if (!(user_max_power_w > 0)) throw std::invalid_argument("Scenario: user_max_power_w must be > 0");
    if (trials < 1) throw std::invalid_argument("Scenario: trials must be >= 1");
    traces.validate();
  }
};

/// Physical inputs shared by both presets.
struct RadioSetup {
  double bandwidth_hz = 1e6;
  double noise_dbm_per_hz = -174.0;
  double helper_power_dbm = 38.0;
  double path_loss_exp = 4.0;
  double antenna_gain = 1.0;
  double max_distance_m = 150.0;
};

/// Nodes with helpers at distances uniform in (0, max_distance], drawn once
/// from `topology_seed`.
inline std::vector<cost::NodeParams> make_nodes(int num_nodes, const RadioSetup& radio, double compute_flops,
                                                double load_latency_s, double load_power_w, double compute_power_w,
                                                std::uint64_t topology_seed) {
  std::mt19937_64 rng(channel::stream_seed(topology_seed, 0xD157));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<cost::NodeParams> nodes;
  for (int v = 0; v < num_nodes; ++v) {
    cost::NodeParams node;
    node.node_id = v;
    node.compute_flops = compute_flops;
    node.load_latency_s = load_latency_s;
    if (v == 0) {
      node.load_power_w = load_power_w;
      node.compute_power_w = compute_power_w;
    } else {
      channel::LinkParams link;
      link.distance_m = radio.max_distance_m * (1.0 - unit(rng));
      link.path_loss_exp = radio.path_loss_exp;
      link.antenna_gain_ul = radio.antenna_gain;
      link.antenna_gain_dl = radio.antenna_gain;
      link.bandwidth_hz = radio.bandwidth_hz;
      link.noise_psd_w_per_hz = dbm_to_watts(radio.noise_dbm_per_hz);
      link.tx_power_helper_w = dbm_to_watts(radio.helper_power_dbm);
      node.link = link;
    }
    nodes.push_back(node);
  }
  return nodes;
}

inline error_budget::ModelConstants uniform_constants(int num_layers, double b_max, double lipschitz) {
  error_budget::ModelConstants c;
  c.b_max.assign(static_cast<std::size_t>(num_layers), b_max);
  c.lipschitz_max.assign(static_cast<std::size_t>(num_layers), lipschitz);
  return c;
}

/// Switch-style configuration: 8 experts, Top-1, 1 MHz links, 0.7 s per layer.
/// Hidden width 768 at 16 bits; expert FFN 768 -> 3072 -> 768.
inline Scenario preset_switch(std::uint64_t seed = 2026) {
  Scenario s;
  s.name = "switch";
  s.model.num_experts = 8;
  s.model.top_k = 1;
  s.model.num_layers = 6;
  s.model.hidden_bits = 768.0 * 16.0;
  s.model.flops_per_token = 4.0 * 768.0 * 3072.0;
  s.model.layer_deadline_s = 0.7;
  RadioSetup radio;
  radio.bandwidth_hz = 1e6;
  const double expert_bytes = 2.0 * 768.0 * 3072.0 * 2.0;
  const double load_latency = expert_bytes / 25e9;
  s.nodes = make_nodes(8, radio, 82.6e12, load_latency, 100.0, 450.0, seed);
  s.constants = uniform_constants(s.model.num_layers, 300.0, 1.1);
  s.budget = error_budget::BudgetSpec::uniform(1e4, s.model.num_layers);
  s.budget_mode = BudgetMode::kDirectCap;
  s.layer_cap = 200.0;
  s.fading.kind = channel::GammaFading{2.0, 1.0};
  s.fading.rng_seed = seed;
  s.slot_s = 0.05;
  s.user_max_power_w = dbm_to_watts(23.0);
  s.trials = 100;
  s.seed = seed;
  s.traces.tokens = 16;
  s.traces.gating_concentration = 1.0;
  s.traces.norm_lo = 100.0;
  s.traces.norm_hi = 300.0;
  s.traces.cos_base = 0.6;
  s.traces.cos_jitter = 0.35;
  s.traces.popularity_concentration = 0.7;
  s.traces.seed = seed + 1;
  return s;
}

/// Mixtral-style configuration: 8 experts, Top-2, 2 MHz links, 74 ms per
/// layer. Hidden width 4096 at 16 bits; gated expert FFN 4096 -> 14336.
inline Scenario preset_mixtral(std::uint64_t seed = 2026) {
  Scenario s;
  s.name = "mixtral";
  s.model.num_experts = 8;
  s.model.top_k = 2;
  s.model.num_layers = 4;
  s.model.hidden_bits = 4096.0 * 16.0;
  s.model.flops_per_token = 6.0 * 4096.0 * 14336.0;
  s.model.layer_deadline_s = 0.074;
  RadioSetup radio;
  radio.bandwidth_hz = 2e6;
  const double expert_bytes = 3.0 * 4096.0 * 14336.0 * 2.0;
  const double load_latency = expert_bytes / 25e9;
  s.nodes = make_nodes(8, radio, 82.6e12, load_latency, 100.0, 450.0, seed);
  s.constants = uniform_constants(s.model.num_layers, 2.0, 1.1);
  s.budget = error_budget::BudgetSpec::uniform(100.0, s.model.num_layers);
  s.budget_mode = BudgetMode::kDirectCap;
  s.layer_cap = 1.5;
  s.fading.kind = channel::GammaFading{2.0, 1.0};
  s.fading.rng_seed = seed;
  s.slot_s = 0.01;
  s.user_max_power_w = dbm_to_watts(23.0);
  s.trials = 100;
  s.seed = seed;
  s.traces.tokens = 4;
  s.traces.gating_concentration = 2.0;
  s.traces.norm_lo = 0.5;
  s.traces.norm_hi = 2.0;
  s.traces.cos_base = 0.6;
  s.traces.cos_jitter = 0.35;
  s.traces.popularity_concentration = 0.7;
  s.traces.seed = seed + 1;
  return s;
}

inline Scenario preset(const std::string& name, std::uint64_t seed = 2026) {
  if (name == "switch") return preset_switch(seed);
  if (name == "mixtral") return preset_mixtral(seed);
  throw std::invalid_argument("unknown preset '" + name + "' (expected switch or mixtral)");
}

}  // namespace siftmoe::harness
