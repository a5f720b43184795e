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
#include <random>
#include <vector>

#include "siftmoe/cost.hpp"
#include "siftmoe/error_budget.hpp"
#include "siftmoe/selection.hpp"

namespace testsupport {

using siftmoe::cost::MarginalCostTable;
using siftmoe::error_budget::LayerTrace;
using siftmoe::error_budget::TokenTrace;
using siftmoe::selection::FeasibleOption;
using siftmoe::selection::FeasibleSets;

/// Random layer: symmetric cosine matrix, random Top-K sets and gating.
inline LayerTrace random_layer(std::mt19937_64& rng, int tokens, int experts, int top_k) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<std::vector<double>> cosm(experts, std::vector<double>(experts, 1.0));
  for (int i = 0; i < experts; ++i)
    for (int j = i + 1; j < experts; ++j) cosm[i][j] = cosm[j][i] = -1.0 + 2.0 * U(rng);
  LayerTrace layer;
  layer.num_experts = experts;
  for (int m = 0; m < tokens; ++m) {
    TokenTrace tok;
    std::vector<int> ids(experts);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    tok.top_set.assign(ids.begin(), ids.begin() + top_k);
    double sum = 0.0;
    for (int r = 0; r < top_k; ++r) {
      tok.gating.push_back(0.05 + U(rng));
      sum += tok.gating.back();
    }
    for (auto& g : tok.gating) g /= sum;
    std::sort(tok.gating.rbegin(), tok.gating.rend());
    for (int e = 0; e < experts; ++e) tok.output_norms.push_back(0.1 + 3.0 * U(rng));
    for (int r = 0; r < top_k; ++r)
      for (int e = 0; e < experts; ++e) tok.cosine.push_back(cosm[tok.top_set[r]][e]);
    layer.tokens.push_back(std::move(tok));
  }
  return layer;
}

/// Random nondecreasing table; with `fixed_charge` the first slot carries
/// an extra one-off cost like the user node.
inline MarginalCostTable random_table(std::mt19937_64& rng, int node_id, int d_max, bool fixed_charge = false) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  MarginalCostTable t;
  t.node_id = node_id;
  t.d_max = d_max;
  double c = 0.1 + U(rng);
  for (int d = 0; d < d_max; ++d) {
    t.costs.push_back(c);
    c += U(rng) < 0.3 ? 0.0 : U(rng);
  }
  if (fixed_charge && d_max > 0) t.costs[0] += 2.0 * U(rng);
  return t;
}

/// Random feasible sets: each token gets a random nonempty collection of
/// node subsets of size <= K.
inline FeasibleSets random_feasible(std::mt19937_64& rng, int tokens, int nodes, int top_k) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<int> all(nodes);
  std::iota(all.begin(), all.end(), 0);
  const auto subsets = siftmoe::selection::node_subsets(all, top_k);
  FeasibleSets f;
  for (int m = 0; m < tokens; ++m) {
    std::vector<FeasibleOption> omega;
    for (const auto& s : subsets) {
      if (U(rng) < 0.55) {
        FeasibleOption o;
        o.nodes = s;
        o.mapping.targets = s;
        omega.push_back(o);
      }
    }
    if (omega.empty()) {
      FeasibleOption o;
      o.nodes = subsets[static_cast<std::size_t>(rng() % subsets.size())];
      o.mapping.targets = o.nodes;
      omega.push_back(o);
    }
    f.per_token.push_back(std::move(omega));
  }
  return f;
}

/// Exhaustive minimum over all choices; loads over capacity are rejected.
/// Energy is summed node by node over occupied slots.
inline double exhaustive_min(const FeasibleSets& f, const std::vector<MarginalCostTable>& tables, bool* any = nullptr) {
  const std::size_t M = f.per_token.size();
  std::vector<int> loads(tables.size(), 0);
  double best = std::numeric_limits<double>::infinity();
  auto rec = [&](auto&& self, std::size_t m) -> void {
    if (m == M) {
      double e = 0.0;
      for (std::size_t v = 0; v < tables.size(); ++v)
        for (int d = 1; d <= loads[v]; ++d) e += tables[v].costs[static_cast<std::size_t>(d - 1)];
      best = std::min(best, e);
      return;
    }
    for (const auto& o : f.per_token[m]) {
      bool ok = true;
      for (int v : o.nodes) ok = ok && loads[static_cast<std::size_t>(v)] < tables[static_cast<std::size_t>(v)].d_max;
      if (!ok) continue;
      for (int v : o.nodes) ++loads[static_cast<std::size_t>(v)];
      self(self, m + 1);
      for (int v : o.nodes) --loads[static_cast<std::size_t>(v)];
    }
  };
  rec(rec, 0);
  if (any) *any = std::isfinite(best);
  return best;
}

}  // namespace testsupport
