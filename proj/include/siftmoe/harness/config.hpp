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

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <fstream>
#include <istream>
#include <variant>
#include <set>
#include <stdexcept>
#include <string>

#include "siftmoe/harness/scenario.hpp"
#include "siftmoe/harness/traces.hpp"

namespace siftmoe::harness {

namespace detail {

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "scenario.preset", "scenario.name", "scenario.seed", "scenario.trials", "scenario.regime", "scenario.slot_s",
      "radio.bandwidth_mhz", "radio.helper_power_dbm", "radio.noise_dbm_per_hz", "radio.path_loss_exp",
      "radio.antenna_gain", "radio.max_distance_m", "radio.user_max_power_dbm",
      "model.num_layers", "model.top_k", "model.hidden_bits", "model.flops_per_token", "model.deadline_s",
      "budget.mode", "budget.layer_cap", "budget.theta", "budget.kappa_history", "budget.b_max", "budget.lipschitz",
      "fading.kind", "fading.shape", "fading.mean", "fading.value",
      "traces.tokens", "traces.gating_concentration", "traces.norm_lo", "traces.norm_hi", "traces.cos_base",
      "traces.cos_jitter", "traces.popularity_concentration", "traces.seed", "traces.file"};
  return keys;
}

}  // namespace detail

/// Builds a scenario from an INI file: a named preset overridden key by
/// key. Unknown sections or keys are rejected.
inline Scenario load_config(std::istream& is, const std::string& source = "<config>") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::runtime_error(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  for (const auto& [section, body] : tree) {
    for (const auto& [key, value] : body) {
      if (!detail::known_keys().count(section + "." + key))
        throw std::runtime_error(source + ": unknown key [" + section + "] " + key);
    }
  }

  const auto seed = tree.get<std::uint64_t>("scenario.seed", 2026);
  Scenario s = preset(tree.get<std::string>("scenario.preset", "switch"), seed);
  s.name = tree.get<std::string>("scenario.name", s.name);
  s.trials = tree.get<int>("scenario.trials", s.trials);
  const auto regime = tree.get<std::string>("scenario.regime", "slow");
  if (regime == "slow")
    s.regime = Regime::kSlow;
  else if (regime == "fast")
    s.regime = Regime::kFast;
  else
    throw std::runtime_error(source + ": regime must be slow or fast");
  s.slot_s = tree.get<double>("scenario.slot_s", s.slot_s);

  if (auto v = tree.get_optional<double>("radio.max_distance_m")) {
    for (auto& node : s.nodes)
      if (node.link) node.link->distance_m *= *v / 150.0;
  }
  for (auto& node : s.nodes) {
    if (!node.link) continue;
    auto& link = *node.link;
    if (auto v = tree.get_optional<double>("radio.bandwidth_mhz")) link.bandwidth_hz = *v * 1e6;
    if (auto v = tree.get_optional<double>("radio.helper_power_dbm")) link.tx_power_helper_w = dbm_to_watts(*v);
    if (auto v = tree.get_optional<double>("radio.noise_dbm_per_hz")) link.noise_psd_w_per_hz = dbm_to_watts(*v);
    if (auto v = tree.get_optional<double>("radio.path_loss_exp")) link.path_loss_exp = *v;
    if (auto v = tree.get_optional<double>("radio.antenna_gain")) link.antenna_gain_ul = link.antenna_gain_dl = *v;
  }
  if (auto v = tree.get_optional<double>("radio.user_max_power_dbm")) s.user_max_power_w = dbm_to_watts(*v);

  s.model.num_layers = tree.get<int>("model.num_layers", s.model.num_layers);
  s.model.top_k = tree.get<int>("model.top_k", s.model.top_k);
  s.model.hidden_bits = tree.get<double>("model.hidden_bits", s.model.hidden_bits);
  s.model.flops_per_token = tree.get<double>("model.flops_per_token", s.model.flops_per_token);
  s.model.layer_deadline_s = tree.get<double>("model.deadline_s", s.model.layer_deadline_s);

  const double b_max = tree.get<double>("budget.b_max", s.constants.b_max.front());
  const double lipschitz = tree.get<double>("budget.lipschitz", s.constants.lipschitz_max.front());
  s.constants = uniform_constants(s.model.num_layers, b_max, lipschitz);
  s.budget = error_budget::BudgetSpec::uniform(tree.get<double>("budget.theta", s.budget.theta), s.model.num_layers);
  const auto mode = tree.get<std::string>("budget.mode", s.budget_mode == BudgetMode::kDirectCap ? "cap" : "final");
  if (mode == "cap")
    s.budget_mode = BudgetMode::kDirectCap;
  else if (mode == "final")
    s.budget_mode = BudgetMode::kFinalBudget;
  else
    throw std::runtime_error(source + ": budget.mode must be cap or final");
  s.layer_cap = tree.get<double>("budget.layer_cap", s.layer_cap);
  const auto history = tree.get<std::string>("budget.kappa_history", "realized");
  if (history == "realized")
    s.kappa_history = KappaHistory::kRealized;
  else if (history == "budgeted")
    s.kappa_history = KappaHistory::kBudgeted;
  else
    throw std::runtime_error(source + ": budget.kappa_history must be realized or budgeted");

  const auto kind = tree.get<std::string>("fading.kind", "gamma");
  if (kind == "gamma") {
    auto g = std::get_if<channel::GammaFading>(&s.fading.kind);
    const channel::GammaFading base = g ? *g : channel::GammaFading{2.0, 1.0};
    s.fading.kind = channel::GammaFading{tree.get<double>("fading.shape", base.shape),
                                         tree.get<double>("fading.mean", base.mean)};
  } else if (kind == "deterministic") {
    s.fading.kind = channel::Deterministic{tree.get<double>("fading.value", 1.0)};
  } else {
    throw std::runtime_error(source + ": fading.kind must be gamma or deterministic");
  }

  auto& t = s.traces;
  t.tokens = tree.get<int>("traces.tokens", t.tokens);
  t.gating_concentration = tree.get<double>("traces.gating_concentration", t.gating_concentration);
  t.norm_lo = tree.get<double>("traces.norm_lo", t.norm_lo);
  t.norm_hi = tree.get<double>("traces.norm_hi", t.norm_hi);
  t.cos_base = tree.get<double>("traces.cos_base", t.cos_base);
  t.cos_jitter = tree.get<double>("traces.cos_jitter", t.cos_jitter);
  t.popularity_concentration = tree.get<double>("traces.popularity_concentration", t.popularity_concentration);
  t.seed = tree.get<std::uint64_t>("traces.seed", t.seed);
  if (auto file = tree.get_optional<std::string>("traces.file")) {
    s.fixed_traces = read_traces_file(*file);
    if (static_cast<int>(s.fixed_traces.size()) != s.model.num_layers)
      throw std::runtime_error(source + ": trace file layer count differs from model.num_layers");
  }
  s.traces.validate();
  s.validate();
  return s;
}

inline Scenario load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path);
  return load_config(is, path);
}

}  // namespace siftmoe::harness
