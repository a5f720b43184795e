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
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace siftmoe::error_budget {

/// Mapping target meaning "drop this expert's contribution".
inline constexpr int kSkip = -1;

/// Routing statistics of one token at one MoE layer.
///
/// `cosine` is the row block of the layer's output-cosine matrix for the
/// token's Top-K experts: row r holds cos(theta) between expert top_set[r]
/// and every expert 0..N-1, so it is |top_set| x N, row-major.
struct TokenTrace {
  std::vector<int> top_set;
  std::vector<double> gating;
  std::vector<double> output_norms;
  std::vector<double> cosine;

  std::size_t num_experts() const { return output_norms.size(); }

  double cos(std::size_t row, int expert) const {
    return cosine.at(row * num_experts() + static_cast<std::size_t>(expert));
  }

  std::optional<std::size_t> rank_of(int expert) const {
    const auto it = std::find(top_set.begin(), top_set.end(), expert);
    if (it == top_set.end()) return std::nullopt;
    return static_cast<std::size_t>(it - top_set.begin());
  }
};

struct LayerTrace {
  int layer_id = 0;
  int num_experts = 0;
  std::vector<TokenTrace> tokens;

  std::size_t num_tokens() const { return tokens.size(); }

  void validate() const {
    const auto n = static_cast<std::size_t>(num_experts);
    for (std::size_t m = 0; m < tokens.size(); ++m) {
      const auto& tok = tokens[m];
      const std::string where = "LayerTrace layer " + std::to_string(layer_id) + " token " + std::to_string(m) + ": ";
      if (tok.top_set.empty()) throw std::invalid_argument(where + "empty top set");
      if (tok.gating.size() != tok.top_set.size()) throw std::invalid_argument(where + "gating/top-set size mismatch");
      if (tok.output_norms.size() != n) throw std::invalid_argument(where + "output_norms must have N entries");
      if (tok.cosine.size() != tok.top_set.size() * n) throw std::invalid_argument(where + "cosine block must be K x N");
      double sum = 0.0;
      for (double g : tok.gating) {
        if (!(g >= 0)) throw std::invalid_argument(where + "negative gating score");
        sum += g;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument(where + "gating scores do not sum to 1");
      for (double v : tok.output_norms)
        if (!(v >= 0)) throw std::invalid_argument(where + "negative output norm");
      for (std::size_t r = 0; r < tok.top_set.size(); ++r) {
        const int i = tok.top_set[r];
        if (i < 0 || i >= num_experts) throw std::invalid_argument(where + "top-set expert out of range");
        if (std::count(tok.top_set.begin(), tok.top_set.end(), i) != 1)
          throw std::invalid_argument(where + "duplicate expert in top set");
        if (std::abs(tok.cos(r, i) - 1.0) > 1e-12) throw std::invalid_argument(where + "cosine diagonal must be 1");
        for (int j = 0; j < num_experts; ++j) {
          const double c = tok.cos(r, j);
          if (!(c >= -1.0 && c <= 1.0)) throw std::invalid_argument(where + "cosine outside [-1, 1]");
          if (auto s = tok.rank_of(j); s && std::abs(tok.cos(*s, i) - c) > 1e-12)
            throw std::invalid_argument(where + "cosine block not symmetric");
        }
      }
    }
  }
};

/// Per-layer output bound B_max and expert Lipschitz constant beta_max.
struct ModelConstants {
  std::vector<double> b_max;
  std::vector<double> lipschitz_max;

  int num_layers() const { return static_cast<int>(b_max.size()); }

  void validate() const {
    if (b_max.size() != lipschitz_max.size()) throw std::invalid_argument("ModelConstants: length mismatch");
    for (std::size_t l = 0; l < b_max.size(); ++l)
      if (!(b_max[l] > 0 && lipschitz_max[l] > 0))
        throw std::invalid_argument("ModelConstants: constants must be > 0");
  }
};

/// Final-output deviation budget theta, split across layers, with optional
/// intermediate caps kappa (+inf disables a cap).
struct BudgetSpec {
  double theta = 0.0;
  std::vector<double> theta_alloc;
  std::vector<double> kappa;

  static BudgetSpec uniform(double theta, int num_layers) {
    BudgetSpec spec;
    spec.theta = theta;
    spec.theta_alloc.assign(static_cast<std::size_t>(num_layers), theta / num_layers);
    spec.kappa.assign(static_cast<std::size_t>(num_layers), std::numeric_limits<double>::infinity());
    return spec;
  }

  void validate() const {
    if (theta_alloc.size() != kappa.size()) throw std::invalid_argument("BudgetSpec: length mismatch");
    double sum = 0.0;
    for (double t : theta_alloc) {
      if (t < 0) throw std::invalid_argument("BudgetSpec: negative allocation");
      sum += t;
    }
    if (std::abs(sum - theta) > 1e-9 * std::max(1.0, std::abs(theta)))
      throw std::invalid_argument("BudgetSpec: allocation does not sum to theta");
  }
};

/// For each Top-K expert (same order as the token's top_set) the expert
/// actually executed, or kSkip.
struct ExpertMapping {
  std::vector<int> targets;

  bool operator==(const ExpertMapping&) const = default;

  std::vector<int> active_targets() const {
    std::vector<int> out;
    for (int t : targets)
      if (t != kSkip) out.push_back(t);
    std::sort(out.begin(), out.end());
    return out;
  }
};

/// ||FFN_i|| sqrt(1 + rho^2 - 2 rho cos) with rho = ||FFN_j|| / ||FFN_i||,
/// evaluated as sqrt(n_i^2 + n_j^2 - 2 n_i n_j cos) so that a zero-norm
/// expert does not divide by zero. Skip is the rho = 0 case.
inline double pair_deviation(const LayerTrace& trace, std::size_t token, int expert, int target) {
  const auto& tok = trace.tokens.at(token);
  const auto rank = tok.rank_of(expert);
  if (!rank) throw std::invalid_argument("pair_deviation: expert " + std::to_string(expert) + " not in top set");
  if (target != kSkip && (target < 0 || target >= trace.num_experts))
    throw std::invalid_argument("pair_deviation: unknown expert id " + std::to_string(target));
  const double ni = tok.output_norms[static_cast<std::size_t>(expert)];
  if (target == expert) return 0.0;
  if (target == kSkip) return ni;
  const double nj = tok.output_norms[static_cast<std::size_t>(target)];
  const double sq = ni * ni + nj * nj - 2.0 * ni * nj * tok.cos(*rank, target);
  return std::sqrt(std::max(sq, 0.0));
}

inline double token_deviation_bound(const LayerTrace& trace, std::size_t token, const ExpertMapping& mapping) {
  const auto& tok = trace.tokens.at(token);
  if (mapping.targets.size() != tok.top_set.size())
    throw std::invalid_argument("token_deviation_bound: mapping size differs from top set");
  double bound = 0.0;
  for (std::size_t r = 0; r < tok.top_set.size(); ++r)
    bound += tok.gating[r] * pair_deviation(trace, token, tok.top_set[r], mapping.targets[r]);
  return bound;
}

inline ExpertMapping identity_mapping(const TokenTrace& tok) { return ExpertMapping{tok.top_set}; }

/// Prod_{t=from}^{to} beta_t over 1-based layer indices; empty product is 1.
inline double lipschitz_product(const ModelConstants& constants, int from, int to) {
  double prod = 1.0;
  for (int t = from; t <= to; ++t) prod *= constants.lipschitz_max.at(static_cast<std::size_t>(t - 1));
  return prod;
}

/// Sum_{r=1}^{upto} (2 B_r + delta_r) Prod_{t=r+1}^{upto} beta_t.
inline double accumulated_bound(const ModelConstants& constants, const std::vector<double>& per_layer_delta,
                                int upto) {
  if (upto < 0 || upto > constants.num_layers() || static_cast<std::size_t>(upto) > per_layer_delta.size())
    throw std::invalid_argument("accumulated_bound: layer index out of range");
  double total = 0.0;
  for (int r = 1; r <= upto; ++r) {
    const auto ri = static_cast<std::size_t>(r - 1);
    total += (2.0 * constants.b_max[ri] + per_layer_delta[ri]) * lipschitz_product(constants, r + 1, upto);
  }
  return total;
}

/// Per-layer deviation budget eta for 1-based layer `layer`, from the
/// intermediate cap branch and the final-output branch. `delta_history`
/// holds delta for layers 1..layer-1. May be negative.
inline double layer_budget(const ModelConstants& constants, const BudgetSpec& budget,
                           const std::vector<double>& delta_history, int layer) {
  const int num_layers = constants.num_layers();
  if (layer < 1 || layer > num_layers) throw std::invalid_argument("layer_budget: layer index out of range");
  if (delta_history.size() + 1 < static_cast<std::size_t>(layer))
    throw std::invalid_argument("layer_budget: delta history too short");
  const auto li = static_cast<std::size_t>(layer - 1);
  const double two_b = 2.0 * constants.b_max[li];

  double kappa_branch = std::numeric_limits<double>::infinity();
  if (std::isfinite(budget.kappa.at(li))) {
    double carried = 0.0;
    for (int r = 1; r < layer; ++r) {
      const auto ri = static_cast<std::size_t>(r - 1);
      carried += (2.0 * constants.b_max[ri] + delta_history[ri]) * lipschitz_product(constants, r + 1, layer);
    }
    kappa_branch = budget.kappa[li] - two_b - carried;
  }
  const double theta_branch = budget.theta_alloc.at(li) / lipschitz_product(constants, layer + 1, num_layers) - two_b;
  return std::min(kappa_branch, theta_branch);
}

struct MappingChoice {
  ExpertMapping mapping;
  double bound = 0.0;
};

namespace detail {

inline bool mapping_key_less(const std::vector<int>& a, const std::vector<int>& b, int num_experts) {
  const auto key = [num_experts](int t) { return t == kSkip ? num_experts : t; };
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(),
                                      [&](int x, int y) { return key(x) < key(y); });
}

}  // namespace detail

/// Lowest-deviation mapping of the token's Top-K experts onto exactly the
/// node set `nodes` (each node used once, leftovers skipped). nullopt when
/// no such mapping exists, i.e. |nodes| > |top set|.
inline std::optional<MappingChoice> best_mapping(const LayerTrace& trace, std::size_t token,
                                                 const std::vector<int>& nodes) {
  const auto& tok = trace.tokens.at(token);
  if (nodes.empty()) throw std::invalid_argument("best_mapping: empty node set");
  for (int v : nodes)
    if (v < 0 || v >= trace.num_experts) throw std::invalid_argument("best_mapping: unknown expert id");
  const std::size_t k = tok.top_set.size();
  if (nodes.size() > k) return std::nullopt;

  std::optional<MappingChoice> best;
  std::vector<int> targets(k, kSkip);
  std::vector<bool> used(nodes.size(), false);
  std::size_t used_count = 0;

  // Depth-first over ranks; each rank picks an unused node or Skip.
  auto visit = [&](auto&& self, std::size_t rank) -> void {
    if (k - rank < nodes.size() - used_count) return;  // cannot cover the rest
    if (rank == k) {
      ExpertMapping mapping{targets};
      const double bound = token_deviation_bound(trace, token, mapping);
      if (!best || bound < best->bound ||
          (bound == best->bound && detail::mapping_key_less(targets, best->mapping.targets, trace.num_experts))) {
        best = MappingChoice{std::move(mapping), bound};
      }
      return;
    }
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      if (used[j]) continue;
      used[j] = true;
      ++used_count;
      targets[rank] = nodes[j];
      self(self, rank + 1);
      targets[rank] = kSkip;
      --used_count;
      used[j] = false;
    }
    self(self, rank + 1);
  };
  visit(visit, 0);
  return best;
}

/// best_mapping filtered by the per-layer budget eta.
inline std::optional<MappingChoice> feasible_mappings(const LayerTrace& trace, std::size_t token,
                                                      const std::vector<int>& nodes, double eta) {
  auto choice = best_mapping(trace, token, nodes);
  if (!choice || choice->bound > eta) return std::nullopt;
  return choice;
}

}  // namespace siftmoe::error_budget
