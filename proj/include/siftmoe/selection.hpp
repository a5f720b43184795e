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
#include <unordered_map>
#include <vector>

#include "siftmoe/cost.hpp"
#include "siftmoe/error_budget.hpp"

namespace siftmoe::selection {

using cost::MarginalCostTable;
using error_budget::ExpertMapping;
using error_budget::LayerTrace;

/// A token (or the whole instance) admits no assignment.
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(const std::string& what, int token) : std::runtime_error(what), token_(token) {}
  int token() const { return token_; }

 private:
  int token_;
};

class StateCapError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One admissible node subset for a token with its best expert mapping.
struct FeasibleOption {
  std::vector<int> nodes;
  ExpertMapping mapping;
  double bound = 0.0;
};

struct FeasibleSets {
  std::vector<std::vector<FeasibleOption>> per_token;

  std::size_t num_tokens() const { return per_token.size(); }
};

/// Token-to-node assignment for one layer. Row m of `token_nodes` is the
/// sorted node subset J_m; x_{m,v} = 1 iff v is in it.
struct SelectionPlan {
  int num_nodes = 0;
  std::vector<std::vector<int>> token_nodes;
  std::vector<ExpertMapping> mappings;
  std::vector<double> bounds;
  std::vector<int> loads;
  double objective_j = 0.0;

  std::size_t num_tokens() const { return token_nodes.size(); }

  bool x(std::size_t token, int node) const {
    const auto& row = token_nodes.at(token);
    return std::binary_search(row.begin(), row.end(), node);
  }
};

/// All subsets of `nodes` with 1..max_size elements, ordered by size and then
/// lexicographically. `nodes` must be sorted.
inline std::vector<std::vector<int>> node_subsets(const std::vector<int>& nodes, int max_size) {
  std::vector<std::vector<int>> out;
  std::vector<int> current;
  for (int size = 1; size <= max_size && size <= static_cast<int>(nodes.size()); ++size) {
    auto visit = [&](auto&& self, std::size_t start) -> void {
      if (static_cast<int>(current.size()) == size) {
        out.push_back(current);
        return;
      }
      for (std::size_t i = start; i < nodes.size(); ++i) {
        current.push_back(nodes[i]);
        self(self, i + 1);
        current.pop_back();
      }
    };
    visit(visit, 0);
  }
  return out;
}

/// Feasible node subsets per token: nodes that can take at least one token,
/// subsets of size <= top_k, kept when a mapping fits the budget eta.
inline FeasibleSets build_feasible_sets(const LayerTrace& trace, const std::vector<MarginalCostTable>& tables,
                                        double eta, int top_k) {
  std::vector<int> usable;
  for (const auto& t : tables)
    if (t.d_max >= 1) usable.push_back(t.node_id);
  std::sort(usable.begin(), usable.end());
  const auto subsets = node_subsets(usable, top_k);

  FeasibleSets sets;
  sets.per_token.resize(trace.num_tokens());
  for (std::size_t m = 0; m < trace.num_tokens(); ++m) {
    for (const auto& subset : subsets) {
      if (auto choice = error_budget::feasible_mappings(trace, m, subset, eta)) {
        sets.per_token[m].push_back(FeasibleOption{subset, std::move(choice->mapping), choice->bound});
      }
    }
    if (sets.per_token[m].empty()) {
      throw InfeasibleError("token " + std::to_string(m) + " infeasible under budget", static_cast<int>(m));
    }
  }
  return sets;
}

/// Total energy of a load vector: per-node prefix sums, added in node order.
/// Every solver reports its objective through this function.
inline double plan_objective(const std::vector<MarginalCostTable>& tables, const std::vector<int>& loads) {
  double total = 0.0;
  for (std::size_t v = 0; v < tables.size(); ++v) total += tables[v].prefix(loads[v]);
  return total;
}

/// Builds a plan from one chosen option index per token.
inline SelectionPlan plan_from_choices(const FeasibleSets& feasible, const std::vector<std::size_t>& choice,
                                       const std::vector<MarginalCostTable>& tables) {
  SelectionPlan plan;
  plan.num_nodes = static_cast<int>(tables.size());
  plan.loads.assign(tables.size(), 0);
  for (std::size_t m = 0; m < feasible.num_tokens(); ++m) {
    const auto& opt = feasible.per_token[m].at(choice[m]);
    plan.token_nodes.push_back(opt.nodes);
    plan.mappings.push_back(opt.mapping);
    plan.bounds.push_back(opt.bound);
    for (int v : opt.nodes) ++plan.loads[static_cast<std::size_t>(v)];
  }
  plan.objective_j = plan_objective(tables, plan.loads);
  return plan;
}

/// Decoding step: pick the option minimizing the summed per-node cost f_v.
inline SelectionPlan solve_single_token(const std::vector<FeasibleOption>& omega, const std::vector<double>& f) {
  if (omega.empty()) throw InfeasibleError("single token has an empty feasible set", 0);
  std::size_t best = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < omega.size(); ++j) {
    double c = 0.0;
    for (int v : omega[j].nodes) c += f.at(static_cast<std::size_t>(v));
    if (c < best_cost) {
      best_cost = c;
      best = j;
    }
  }
  SelectionPlan plan;
  plan.num_nodes = static_cast<int>(f.size());
  plan.loads.assign(f.size(), 0);
  plan.token_nodes.push_back(omega[best].nodes);
  plan.mappings.push_back(omega[best].mapping);
  plan.bounds.push_back(omega[best].bound);
  for (int v : omega[best].nodes) ++plan.loads[static_cast<std::size_t>(v)];
  plan.objective_j = best_cost;
  return plan;
}

/// Same, with f_v taken as the first-slot marginal cost of each node.
inline SelectionPlan solve_single_token(const FeasibleSets& feasible, const std::vector<MarginalCostTable>& tables) {
  if (feasible.num_tokens() != 1) throw std::invalid_argument("solve_single_token: expects exactly one token");
  std::vector<double> f(tables.size(), std::numeric_limits<double>::infinity());
  for (std::size_t v = 0; v < tables.size(); ++v)
    if (tables[v].d_max >= 1) f[v] = tables[v].cost(1);
  auto plan = solve_single_token(feasible.per_token[0], f);
  plan.objective_j = plan_objective(tables, plan.loads);
  return plan;
}

namespace detail {

struct Arc {
  int from;
  int to;
  double cost;
};

}  // namespace detail

/// Min-cost token-to-node matching for K = 1 by successive shortest
/// augmenting paths. Node capacities and convex per-node costs enter through
/// one residual arc q_v -> t priced at the next slot and one arc t -> q_v
/// refunding the last occupied slot; Bellman-Ford handles negative arcs.
/// Tables must have nondecreasing marginal costs.
inline SelectionPlan solve_ssap_convex(const FeasibleSets& feasible, const std::vector<MarginalCostTable>& tables) {
  const int num_tokens = static_cast<int>(feasible.num_tokens());
  const int num_nodes = static_cast<int>(tables.size());
  for (const auto& omega : feasible.per_token)
    for (const auto& opt : omega)
      if (opt.nodes.size() != 1) throw std::invalid_argument("solve_ssap_k1: options must be single nodes");

  const int source = 0;
  const int sink = 1 + num_tokens + num_nodes;
  const auto token_vertex = [](int m) { return 1 + m; };
  const auto node_vertex = [num_tokens](int v) { return 1 + num_tokens + v; };
  const int num_vertices = sink + 1;

  double scale = 1.0;
  for (const auto& t : tables)
    for (double c : t.costs) scale = std::max(scale, std::abs(c));
  const double tol = 1e-12 * scale;

  // assigned[m] = option index or -1
  std::vector<int> assigned(static_cast<std::size_t>(num_tokens), -1);
  std::vector<int> loads(static_cast<std::size_t>(num_nodes), 0);

  for (int flow = 0; flow < num_tokens; ++flow) {
    std::vector<detail::Arc> arcs;
    for (int m = 0; m < num_tokens; ++m) {
      if (assigned[static_cast<std::size_t>(m)] < 0)
        arcs.push_back({source, token_vertex(m), 0.0});
      else
        arcs.push_back({token_vertex(m), source, 0.0});
    }
    for (int m = 0; m < num_tokens; ++m) {
      const auto& omega = feasible.per_token[static_cast<std::size_t>(m)];
      for (std::size_t j = 0; j < omega.size(); ++j) {
        const int v = omega[j].nodes[0];
        if (assigned[static_cast<std::size_t>(m)] == static_cast<int>(j))
          arcs.push_back({node_vertex(v), token_vertex(m), 0.0});
        else
          arcs.push_back({token_vertex(m), node_vertex(v), 0.0});
      }
    }
    for (int v = 0; v < num_nodes; ++v) {
      const auto& table = tables[static_cast<std::size_t>(v)];
      const int load = loads[static_cast<std::size_t>(v)];
      if (load < table.d_max) arcs.push_back({node_vertex(v), sink, table.cost(load + 1)});
      if (load > 0) arcs.push_back({sink, node_vertex(v), -table.cost(load)});
    }

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(static_cast<std::size_t>(num_vertices), inf);
    std::vector<int> pred(static_cast<std::size_t>(num_vertices), -1);
    dist[static_cast<std::size_t>(source)] = 0.0;
    for (int round = 0; round + 1 < num_vertices; ++round) {
      bool changed = false;
      for (std::size_t a = 0; a < arcs.size(); ++a) {
        const auto& arc = arcs[a];
        const double du = dist[static_cast<std::size_t>(arc.from)];
        if (du == inf) continue;
        const double cand = du + arc.cost;
        if (cand < dist[static_cast<std::size_t>(arc.to)] - tol) {
          dist[static_cast<std::size_t>(arc.to)] = cand;
          pred[static_cast<std::size_t>(arc.to)] = static_cast<int>(a);
          changed = true;
        }
      }
      if (!changed) break;
    }

    if (dist[static_cast<std::size_t>(sink)] == inf) {
      int stuck = 0;
      while (stuck < num_tokens && assigned[static_cast<std::size_t>(stuck)] >= 0) ++stuck;
      throw InfeasibleError("no augmenting path: token " + std::to_string(stuck) + " cannot be placed", stuck);
    }

    std::vector<int> path;
    std::vector<bool> seen(static_cast<std::size_t>(num_vertices), false);
    for (int vtx = sink; vtx != source;) {
      if (seen[static_cast<std::size_t>(vtx)]) throw std::logic_error("solve_ssap_k1: cycle in predecessor chain");
      seen[static_cast<std::size_t>(vtx)] = true;
      const int a = pred[static_cast<std::size_t>(vtx)];
      path.push_back(a);
      vtx = arcs[static_cast<std::size_t>(a)].from;
    }

    for (int a : path) {
      const auto& arc = arcs[static_cast<std::size_t>(a)];
      const bool from_token = arc.from >= 1 && arc.from <= num_tokens;
      const bool to_token = arc.to >= 1 && arc.to <= num_tokens;
      const bool from_node = arc.from > num_tokens && arc.from < sink;
      const bool to_node = arc.to > num_tokens && arc.to < sink;
      if (from_token && to_node) {
        const int m = arc.from - 1;
        const int v = arc.to - 1 - num_tokens;
        const auto& omega = feasible.per_token[static_cast<std::size_t>(m)];
        for (std::size_t j = 0; j < omega.size(); ++j)
          if (omega[j].nodes[0] == v) assigned[static_cast<std::size_t>(m)] = static_cast<int>(j);
        ++loads[static_cast<std::size_t>(v)];
      } else if (from_node && to_token) {
        const int v = arc.from - 1 - num_tokens;
        --loads[static_cast<std::size_t>(v)];
        // The token's new assignment is set by its outgoing token->node arc,
        // which appears earlier on the reversed path list.
      }
    }
  }

  std::vector<std::size_t> choice(static_cast<std::size_t>(num_tokens));
  for (int m = 0; m < num_tokens; ++m) choice[static_cast<std::size_t>(m)] = static_cast<std::size_t>(assigned[static_cast<std::size_t>(m)]);
  return plan_from_choices(feasible, choice, tables);
}

namespace detail {

/// A table whose only dip is a one-off charge in slot 1, as for the user.
inline bool convex_after_first(const MarginalCostTable& t) {
  for (int d = 2; d < t.d_max; ++d)
    if (t.cost(d + 1) < t.cost(d)) return false;
  return true;
}

inline bool convex_table(const MarginalCostTable& t) {
  return t.d_max < 2 || (t.cost(2) >= t.cost(1) && convex_after_first(t));
}

}  // namespace detail

/// K = 1 matching for tables that are convex except for a fixed charge in
/// slot 1. Each such node is tried closed (capacity 0) and open (charge
/// spread off, slot 1 priced like slot 2); the best true objective wins.
inline SelectionPlan solve_ssap_k1(const FeasibleSets& feasible, const std::vector<MarginalCostTable>& tables) {
  std::vector<std::size_t> bent;
  for (std::size_t v = 0; v < tables.size(); ++v) {
    if (detail::convex_table(tables[v])) continue;
    if (!detail::convex_after_first(tables[v]))
      throw std::invalid_argument("solve_ssap_k1: marginal costs of node " + std::to_string(tables[v].node_id) +
                                  " are not convex past the first slot");
    bent.push_back(v);
  }
  if (bent.empty()) return solve_ssap_convex(feasible, tables);
  if (bent.size() > 16) throw std::invalid_argument("solve_ssap_k1: too many nodes with a fixed slot-1 charge");

  std::optional<SelectionPlan> best;
  std::optional<InfeasibleError> last_error;
  for (std::uint32_t mask = 0; mask < (1u << bent.size()); ++mask) {
    auto relaxed = tables;
    for (std::size_t i = 0; i < bent.size(); ++i) {
      auto& t = relaxed[bent[i]];
      if (mask & (1u << i)) {
        t.costs[0] = t.costs[1];
      } else {
        t.costs.clear();
        t.d_max = 0;
      }
    }
    try {
      auto plan = solve_ssap_convex(feasible, relaxed);
      plan.objective_j = plan_objective(tables, plan.loads);
      if (!best || plan.objective_j < best->objective_j) best = std::move(plan);
    } catch (const InfeasibleError& e) {
      last_error = e;
    }
  }
  if (!best) throw *last_error;
  return *best;
}

/// Load-vector dynamic program over tokens for any K. States are stored
/// sparsely; `state_cap` bounds prod_v (min(D_v,max, M) + 1).
inline SelectionPlan solve_dp(const FeasibleSets& feasible, const std::vector<MarginalCostTable>& tables,
                              double state_cap = 2e7) {
  const std::size_t num_tokens = feasible.num_tokens();
  const std::size_t num_nodes = tables.size();
  std::vector<std::uint64_t> radix(num_nodes), stride(num_nodes);
  double product = 1.0;
  std::uint64_t acc = 1;
  for (std::size_t v = 0; v < num_nodes; ++v) {
    const int cap = std::min<int>(tables[v].d_max, static_cast<int>(num_tokens));
    radix[v] = static_cast<std::uint64_t>(cap) + 1;
    stride[v] = acc;
    acc *= radix[v];
    product *= static_cast<double>(radix[v]);
  }
  if (product > state_cap) {
    throw StateCapError("solve_dp: load-state space " + std::to_string(product) +
                        " exceeds cap; use the K=1 matching solver or a smaller instance");
  }
  const auto load_of = [&](std::uint64_t key, std::size_t v) { return static_cast<int>((key / stride[v]) % radix[v]); };

  struct Entry {
    double cost;
    std::uint64_t parent;
    std::size_t option;
  };
  // stages[m] maps load-vector keys after m tokens to their best entry.
  std::vector<std::unordered_map<std::uint64_t, Entry>> stages(num_tokens + 1);
  stages[0].emplace(0, Entry{0.0, 0, 0});

  for (std::size_t m = 0; m < num_tokens; ++m) {
    std::vector<std::uint64_t> keys;
    keys.reserve(stages[m].size());
    for (const auto& [key, entry] : stages[m]) keys.push_back(key);
    std::sort(keys.begin(), keys.end());
    auto& next = stages[m + 1];
    const auto& omega = feasible.per_token[m];
    for (std::uint64_t key : keys) {
      const double base = stages[m].at(key).cost;
      for (std::size_t j = 0; j < omega.size(); ++j) {
        bool fits = true;
        double delta = 0.0;
        std::uint64_t next_key = key;
        for (int v : omega[j].nodes) {
          const auto vi = static_cast<std::size_t>(v);
          const int load = load_of(key, vi);
          if (load + 1 > tables[vi].d_max) {
            fits = false;
            break;
          }
          delta += tables[vi].cost(load + 1);
          next_key += stride[vi];
        }
        if (!fits) continue;
        const double cand = base + delta;
        auto it = next.find(next_key);
        if (it == next.end()) {
          next.emplace(next_key, Entry{cand, key, j});
        } else if (cand < it->second.cost) {
          it->second = Entry{cand, key, j};
        }
      }
    }
    if (next.empty()) {
      throw InfeasibleError("solve_dp: no capacity-feasible state after token " + std::to_string(m),
                            static_cast<int>(m));
    }
  }

  std::uint64_t best_key = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (const auto& [key, entry] : stages[num_tokens]) {
    if (entry.cost < best_cost || (entry.cost == best_cost && key < best_key)) {
      best_cost = entry.cost;
      best_key = key;
    }
  }

  std::vector<std::size_t> choice(num_tokens);
  std::uint64_t cur = best_key;
  for (std::size_t m = num_tokens; m > 0; --m) {
    const auto& entry = stages[m].at(cur);
    choice[m - 1] = entry.option;
    cur = entry.parent;
  }
  return plan_from_choices(feasible, choice, tables);
}

struct BruteForceResult {
  SelectionPlan plan;
  std::uint64_t visited = 0;
  std::uint64_t feasible_count = 0;
};

/// Exhaustive search over every per-token option combination. Test oracle.
inline BruteForceResult brute_force(const FeasibleSets& feasible, const std::vector<MarginalCostTable>& tables,
                                    double max_candidates = 1e6) {
  const std::size_t num_tokens = feasible.num_tokens();
  double total = 1.0;
  for (const auto& omega : feasible.per_token) total *= static_cast<double>(omega.size());
  if (total > max_candidates) throw std::invalid_argument("brute_force: instance too large");

  BruteForceResult result;
  result.plan.num_nodes = static_cast<int>(tables.size());
  result.plan.loads.assign(tables.size(), 0);
  if (num_tokens == 0) return result;
  for (const auto& omega : feasible.per_token)
    if (omega.empty()) throw InfeasibleError("brute_force: empty feasible set", 0);

  std::vector<std::size_t> choice(num_tokens, 0);
  std::vector<std::size_t> best_choice;
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> loads(tables.size());
  for (bool done = false; !done;) {
    ++result.visited;
    std::fill(loads.begin(), loads.end(), 0);
    for (std::size_t m = 0; m < num_tokens; ++m)
      for (int v : feasible.per_token[m][choice[m]].nodes) ++loads[static_cast<std::size_t>(v)];
    bool fits = true;
    for (std::size_t v = 0; v < tables.size(); ++v)
      if (loads[v] > tables[v].d_max) fits = false;
    if (fits) {
      ++result.feasible_count;
      const double obj = plan_objective(tables, loads);
      if (obj < best) {
        best = obj;
        best_choice = choice;
      }
    }
    // Odometer step, last token fastest.
    for (std::size_t pos = num_tokens;;) {
      if (pos == 0) {
        done = true;
        break;
      }
      --pos;
      if (++choice[pos] < feasible.per_token[pos].size()) break;
      choice[pos] = 0;
    }
  }
  if (best_choice.empty()) throw InfeasibleError("brute_force: no capacity-feasible assignment", 0);
  result.plan = plan_from_choices(feasible, best_choice, tables);
  return result;
}

}  // namespace siftmoe::selection
