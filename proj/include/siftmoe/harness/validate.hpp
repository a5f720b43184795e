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
#include <string>
#include <vector>

#include "siftmoe/harness/runner.hpp"

namespace siftmoe::harness {

struct PlanCheck {
  bool check_bound = true;
  bool check_objective = true;
  double tolerance = 1e-9;
};

/// Independent checker of one layer plan against its instance. Returns the
/// list of violations; empty means the plan is valid.
inline std::vector<std::string> validate_plan(const Scenario& s, const LayerContext& ctx, const SelectionPlan& plan,
                                              const PlanCheck& opts = {}) {
  std::vector<std::string> out;
  const auto& trace = *ctx.trace;
  const std::size_t num_tokens = trace.num_tokens();
  const int num_nodes = s.num_nodes();
  const int top_k = s.model.top_k;

  if (plan.token_nodes.size() != num_tokens || plan.mappings.size() != num_tokens) {
    out.push_back("plan covers " + std::to_string(plan.token_nodes.size()) + " tokens, layer has " +
                  std::to_string(num_tokens));
    return out;
  }

  std::vector<int> loads(static_cast<std::size_t>(num_nodes), 0);
  for (std::size_t m = 0; m < num_tokens; ++m) {
    const auto& nodes = plan.token_nodes[m];
    const auto tag = "token " + std::to_string(m) + ": ";
    if (nodes.empty() || static_cast<int>(nodes.size()) > top_k) {
      out.push_back(tag + std::to_string(nodes.size()) + " nodes selected, need 1.." + std::to_string(top_k));
    }
    bool nodes_ok = true;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i] < 0 || nodes[i] >= num_nodes) {
        out.push_back(tag + "node " + std::to_string(nodes[i]) + " out of range");
        nodes_ok = false;
      } else if (std::count(nodes.begin(), nodes.end(), nodes[i]) > 1) {
        out.push_back(tag + "node " + std::to_string(nodes[i]) + " selected twice");
        nodes_ok = false;
      }
    }
    if (!nodes_ok) continue;
    for (int v : nodes) ++loads[static_cast<std::size_t>(v)];

    const auto& tok = trace.tokens[m];
    const auto& mapping = plan.mappings[m];
    if (mapping.targets.size() != tok.top_set.size()) {
      out.push_back(tag + "mapping has " + std::to_string(mapping.targets.size()) + " entries, expected " +
                    std::to_string(tok.top_set.size()));
      continue;
    }
    auto active = mapping.active_targets();
    std::sort(active.begin(), active.end());
    auto sorted_nodes = nodes;
    std::sort(sorted_nodes.begin(), sorted_nodes.end());
    if (active != sorted_nodes) out.push_back(tag + "mapping targets do not match the selected nodes");

    const double bound = error_budget::token_deviation_bound(trace, m, mapping);
    if (opts.check_bound && bound > ctx.eta * (1.0 + opts.tolerance) + opts.tolerance) {
      out.push_back(tag + "deviation bound " + std::to_string(bound) + " exceeds budget " + std::to_string(ctx.eta));
    }
    if (m < plan.bounds.size() && std::abs(plan.bounds[m] - bound) > opts.tolerance * std::max(1.0, bound)) {
      out.push_back(tag + "recorded bound " + std::to_string(plan.bounds[m]) + " differs from " + std::to_string(bound));
    }
  }

  if (plan.loads != loads) out.push_back("recorded loads do not match the assignment");
  for (int v = 0; v < num_nodes; ++v) {
    const int d = loads[static_cast<std::size_t>(v)];
    if (d == 0) continue;
    const int cap = node_capacity(s, ctx, v);
    if (d > cap) {
      out.push_back("node " + std::to_string(v) + ": D_v > D_max (" + std::to_string(d) + " > " + std::to_string(cap) +
                    ")");
    }
  }

  if (opts.check_objective && out.empty()) {
    const auto tables = layer_tables(s, ctx, static_cast<int>(num_tokens));
    double objective = 0.0;
    for (int v = 0; v < num_nodes; ++v) {
      const auto& t = tables[static_cast<std::size_t>(v)];
      objective += t.prefix(std::min(loads[static_cast<std::size_t>(v)], t.d_max));
    }
    if (std::abs(objective - plan.objective_j) > opts.tolerance * std::max(1.0, std::abs(objective))) {
      out.push_back("objective " + std::to_string(plan.objective_j) + " J differs from recomputed " +
                    std::to_string(objective) + " J");
    }
  }
  return out;
}

}  // namespace siftmoe::harness
