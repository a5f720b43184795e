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
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "siftmoe/channel.hpp"
#include "siftmoe/cost.hpp"
#include "siftmoe/error_budget.hpp"
#include "siftmoe/fastfading.hpp"
#include "siftmoe/harness/scenario.hpp"
#include "siftmoe/harness/traces.hpp"
#include "siftmoe/selection.hpp"

namespace siftmoe::harness {

using cost::MarginalCostTable;
using selection::SelectionPlan;

/// How the uplink payload is scheduled: one rate over the whole window
/// (slow fading), the causal slot rule, or an equal split across slots.
enum class Transmission { kSlowOptimal, kDynamic, kUniform };

struct ReportRow {
  std::string scheme;
  double sweep_value = 0.0;
  int trial = 0;
  int layer = 0;
  double energy_j = 0.0;
  double latency_s = 0.0;
  int missed_tokens = 0;
  double mean_bound = 0.0;
  bool infeasible = false;
};

/// Everything computed for one scheme on one layer instance.
struct LayerOutcome {
  double energy_j = 0.0;
  double latency_s = 0.0;
  int missed_tokens = 0;
  double mean_bound = 0.0;
  bool infeasible = false;
  double eta = 0.0;
  SelectionPlan plan;
  std::vector<double> token_energy_j;
  std::vector<fastfading::SlotPlan> slots;
};

/// One layer of one trial: routing trace, per-node slow fading draw and the
/// deviation budget in force.
struct LayerContext {
  int trial = 0;
  int layer = 0;
  const error_budget::LayerTrace* trace = nullptr;
  std::vector<double> fading;
  double eta = 0.0;
};

inline std::uint64_t link_seed(const Scenario& s, int trial, int layer, int node) {
  return channel::stream_seed(s.seed, static_cast<std::uint64_t>(trial), static_cast<std::uint64_t>(layer),
                              static_cast<std::uint64_t>(node));
}

/// Per-node fading of one layer (the user entry is a placeholder 1). The
/// same streams feed every scheme and sweep point.
inline std::vector<double> layer_fadings(const Scenario& s, int trial, int layer) {
  std::vector<double> h(s.nodes.size(), 1.0);
  for (std::size_t v = 1; v < s.nodes.size(); ++v) {
    channel::FadingStream stream(s.fading, link_seed(s, trial, layer, static_cast<int>(v)));
    h[v] = stream.next();
  }
  return h;
}

/// Slot fadings of one helper link; a prefix of the same stream as the slow draw.
inline std::vector<double> slot_fadings(const Scenario& s, int trial, int layer, int node, int count) {
  channel::FadingStream stream(s.fading, link_seed(s, trial, layer, node));
  return stream.take(static_cast<std::size_t>(count));
}

inline double downlink_fading(const Scenario& s, const LayerContext& ctx, int node) {
  return s.regime == Regime::kSlow ? ctx.fading[static_cast<std::size_t>(node)] : s.fading.mean();
}

/// Fading value whose reciprocal prices the uplink when no slot schedule is
/// involved: the realized draw, or 1/E[1/h] under fast fading.
inline double pricing_fading(const Scenario& s, const LayerContext& ctx, int node) {
  return s.regime == Regime::kSlow ? ctx.fading[static_cast<std::size_t>(node)]
                                   : 1.0 / channel::expected_inverse_fading(s.fading);
}

inline int node_capacity(const Scenario& s, const LayerContext& ctx, int node) {
  return cost::max_load(s.nodes[static_cast<std::size_t>(node)], s.model, downlink_fading(s, ctx, node));
}

inline double helper_window(const Scenario& s, const LayerContext& ctx, int node, int d) {
  return cost::helper_time_budget(s.nodes[static_cast<std::size_t>(node)], s.model, downlink_fading(s, ctx, node), d);
}

/// Marginal cost tables for selection: realized energies under slow fading,
/// the E[1/h] surrogate under fast fading.
inline std::vector<MarginalCostTable> layer_tables(const Scenario& s, const LayerContext& ctx, int num_tokens) {
  std::vector<MarginalCostTable> tables;
  for (std::size_t v = 0; v < s.nodes.size(); ++v) {
    const auto& node = s.nodes[v];
    if (node.is_user() || s.regime == Regime::kSlow) {
      const double h = ctx.fading[v];
      tables.push_back(cost::marginal_costs(node, s.model, {h, h}, num_tokens));
    } else {
      tables.push_back(fastfading::surrogate_marginal_costs(node, s.model, s.fading, num_tokens));
    }
  }
  return tables;
}

/// Picks the solver for the instance shape: one token, K = 1 matching, or
/// the load-vector DP.
inline SelectionPlan solve_layer(const selection::FeasibleSets& feasible, const std::vector<MarginalCostTable>& tables,
                                 int top_k) {
  if (feasible.num_tokens() == 1) return selection::solve_single_token(feasible, tables);
  if (top_k == 1) return selection::solve_ssap_k1(feasible, tables);
  return selection::solve_dp(feasible, tables);
}

/// The plain Top-K assignment: every token to the nodes of its Top-K experts.
inline SelectionPlan topk_plan(const error_budget::LayerTrace& trace, int num_nodes) {
  SelectionPlan plan;
  plan.num_nodes = num_nodes;
  plan.loads.assign(static_cast<std::size_t>(num_nodes), 0);
  for (const auto& tok : trace.tokens) {
    auto nodes = tok.top_set;
    std::sort(nodes.begin(), nodes.end());
    for (int v : nodes) ++plan.loads[static_cast<std::size_t>(v)];
    plan.token_nodes.push_back(std::move(nodes));
    plan.mappings.push_back(error_budget::identity_mapping(tok));
    plan.bounds.push_back(0.0);
  }
  return plan;
}

struct LinkEnergy {
  double energy_j = 0.0;
  std::optional<fastfading::SlotPlan> slots;
};

/// Energy of pushing d tokens to helper `node` within an uplink window.
inline LinkEnergy transmit(const Scenario& s, const LayerContext& ctx, int node, int d, double window,
                           Transmission mode) {
  LinkEnergy out;
  if (d == 0) return out;
  const auto& link = *s.nodes[static_cast<std::size_t>(node)].link;
  const double bits = d * s.model.hidden_bits;
  if (mode == Transmission::kSlowOptimal) {
    out.energy_j = channel::uplink_energy(link, ctx.fading[static_cast<std::size_t>(node)], bits, window);
    return out;
  }
  const auto params = fastfading::slot_params(link, window, s.slot_s);
  const auto h = slot_fadings(s, ctx.trial, ctx.layer, node, params.num_slots);
  auto plan = mode == Transmission::kDynamic
                  ? fastfading::run_policy(params, h, channel::expected_inverse_fading(s.fading), bits,
                                           fastfading::Clamp::kClamped, node)
                  : fastfading::uniform_baseline(params, h, bits, node);
  out.energy_j = plan.total_energy();
  out.slots = std::move(plan);
  return out;
}

namespace detail {

/// Charges each token the marginal energy of the slot it occupies on every
/// node it uses, tokens taking slots in index order.
inline std::vector<double> token_energies(const SelectionPlan& plan, const std::vector<MarginalCostTable>& tables) {
  std::vector<int> seen(tables.size(), 0);
  std::vector<double> out;
  for (const auto& nodes : plan.token_nodes) {
    double e = 0.0;
    for (int v : nodes) {
      const auto vi = static_cast<std::size_t>(v);
      const int slot = ++seen[vi];
      if (slot <= tables[vi].d_max) e += tables[vi].cost(slot);
    }
    out.push_back(e);
  }
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

}  // namespace detail

/// Energy and latency of a capacity-feasible plan; every active helper uses
/// its whole remaining window for the uplink.
inline LayerOutcome evaluate_plan(const Scenario& s, const LayerContext& ctx, SelectionPlan plan, Transmission mode) {
  LayerOutcome out;
  const auto& user = s.nodes[0];
  out.energy_j = cost::local_energy(user, s.model, plan.loads[0]);
  out.latency_s = cost::local_latency(user, s.model, plan.loads[0]);
  for (int v = 1; v < s.num_nodes(); ++v) {
    const int d = plan.loads[static_cast<std::size_t>(v)];
    if (d == 0) continue;
    const auto& node = s.nodes[static_cast<std::size_t>(v)];
    const double window = helper_window(s, ctx, v, d);
    auto link = transmit(s, ctx, v, d, window, mode);
    out.energy_j += link.energy_j;
    if (link.slots) out.slots.push_back(std::move(*link.slots));
    out.latency_s = std::max(out.latency_s, std::max(window, node.load_latency_s) +
                                                d * cost::helper_token_time(node, s.model, downlink_fading(s, ctx, v)));
  }
  out.mean_bound = detail::mean_of(plan.bounds);
  out.plan = std::move(plan);
  return out;
}

/// Top-K routing regardless of channel state. Ideal: every output arrives;
/// an overloaded helper simply gets the whole deadline as uplink window.
/// Practical: tokens beyond what a node can finish in time (or beyond what
/// the user radio can push at its power ceiling) are missed, their experts
/// count as skipped, and a failing link is charged the power ceiling over
/// the whole deadline.
inline LayerOutcome evaluate_topk(const Scenario& s, const LayerContext& ctx, bool ideal, Transmission mode) {
  const auto& trace = *ctx.trace;
  const double deadline = s.model.layer_deadline_s;
  LayerOutcome out;
  out.plan = topk_plan(trace, s.num_nodes());
  const auto& loads = out.plan.loads;
  const auto& user = s.nodes[0];

  // delivered[v] = number of tokens (in index order) whose output from v arrives
  std::vector<int> delivered(loads.begin(), loads.end());
  out.energy_j = cost::local_energy(user, s.model, loads[0]);
  out.latency_s = cost::local_latency(user, s.model, loads[0]);
  if (!ideal) delivered[0] = std::min(loads[0], node_capacity(s, ctx, 0));

  for (int v = 1; v < s.num_nodes(); ++v) {
    const auto vi = static_cast<std::size_t>(v);
    const int d = loads[vi];
    if (d == 0) continue;
    const auto& node = s.nodes[vi];
    const int capacity = node_capacity(s, ctx, v);
    const double per_token = cost::helper_token_time(node, s.model, downlink_fading(s, ctx, v));
    if (ideal) {
      const double window = d <= capacity ? helper_window(s, ctx, v, d) : deadline;
      auto link = transmit(s, ctx, v, d, window, mode);
      out.energy_j += link.energy_j;
      if (link.slots) out.slots.push_back(std::move(*link.slots));
      out.latency_s = std::max(out.latency_s, std::max(window, node.load_latency_s) + d * per_token);
      continue;
    }
    int ok = std::min(d, capacity);
    const double h_price = pricing_fading(s, ctx, v);
    while (ok > 0 && channel::uplink_power(*node.link, h_price, ok * s.model.hidden_bits,
                                           helper_window(s, ctx, v, ok)) > s.user_max_power_w) {
      --ok;
    }
    delivered[vi] = ok;
    if (ok > 0) {
      auto link = transmit(s, ctx, v, ok, helper_window(s, ctx, v, ok), mode);
      out.energy_j += link.energy_j;
      if (link.slots) out.slots.push_back(std::move(*link.slots));
    }
    if (ok < d) out.energy_j += s.user_max_power_w * deadline;
    out.latency_s = std::max(out.latency_s, deadline);
  }

  std::vector<int> seen(loads.size(), 0);
  std::vector<double> bounds;
  for (std::size_t m = 0; m < trace.tokens.size(); ++m) {
    const auto& tok = trace.tokens[m];
    double bound = 0.0;
    bool missed = false;
    for (std::size_t r = 0; r < tok.top_set.size(); ++r) {
      const auto e = static_cast<std::size_t>(tok.top_set[r]);
      if (++seen[e] > delivered[e]) {
        missed = true;
        bound += tok.gating[r] * tok.output_norms[e];
      }
    }
    if (missed) ++out.missed_tokens;
    bounds.push_back(bound);
  }
  out.plan.bounds = bounds;
  out.mean_bound = detail::mean_of(bounds);
  return out;
}

/// SiftMoE selection for one layer: tables, feasible sets, solver. nullopt
/// when some token has no feasible subset or the loads do not fit.
inline std::optional<SelectionPlan> siftmoe_select(const Scenario& s, const LayerContext& ctx,
                                                   std::vector<MarginalCostTable>* tables_out = nullptr) {
  const int num_tokens = static_cast<int>(ctx.trace->num_tokens());
  auto tables = layer_tables(s, ctx, num_tokens);
  std::optional<SelectionPlan> plan;
  if (num_tokens == 0) {
    SelectionPlan empty;
    empty.num_nodes = s.num_nodes();
    empty.loads.assign(s.nodes.size(), 0);
    plan = std::move(empty);
  } else {
    try {
      const auto feasible = selection::build_feasible_sets(*ctx.trace, tables, ctx.eta, s.model.top_k);
      plan = solve_layer(feasible, tables, s.model.top_k);
    } catch (const selection::InfeasibleError&) {
      plan.reset();
    }
  }
  if (tables_out) *tables_out = std::move(tables);
  return plan;
}

inline std::vector<Transmission> transmissions(const Scenario& s) {
  if (s.regime == Regime::kSlow) return {Transmission::kSlowOptimal};
  return {Transmission::kDynamic, Transmission::kUniform};
}

inline std::string scheme_name(const std::string& base, const Scenario& s, Transmission mode) {
  if (s.regime == Regime::kSlow) return base;
  return base + (mode == Transmission::kDynamic ? "_dynamic" : "_uniform");
}

/// Routing traces of one trial.
inline std::vector<error_budget::LayerTrace> trial_traces(const Scenario& s, int trial) {
  if (!s.fixed_traces.empty()) return s.fixed_traces;
  TraceGenSpec spec = s.traces;
  spec.seed = channel::stream_seed(s.traces.seed, static_cast<std::uint64_t>(trial), 0x7ace5);
  return generate_traces(spec, s.model.num_layers, s.model.num_experts, s.model.top_k);
}

/// Per-scheme, per-layer outcomes of one trial (kept for plan/slot files).
using TrialDetails = std::map<std::string, std::vector<LayerOutcome>>;

inline ReportRow make_row(const std::string& scheme, double sweep_value, int trial, int layer, const LayerOutcome& o) {
  return ReportRow{scheme, sweep_value, trial, layer, o.energy_j, o.latency_s, o.missed_tokens, o.mean_bound, o.infeasible};
}

/// SiftMoE over every layer of one trial. Layers where selection is
/// infeasible fall back to the Practical Top-K outcome and are flagged.
inline std::vector<ReportRow> run_siftmoe(const Scenario& s, const std::vector<error_budget::LayerTrace>& traces,
                                          int trial = 0, double sweep_value = 0.0, TrialDetails* details = nullptr) {
  std::vector<ReportRow> rows;
  std::vector<double> history;
  for (int l = 0; l < static_cast<int>(traces.size()); ++l) {
    LayerContext ctx{trial, l, &traces[static_cast<std::size_t>(l)], layer_fadings(s, trial, l), s.layer_cap};
    if (s.budget_mode == BudgetMode::kFinalBudget) {
      ctx.eta = error_budget::layer_budget(s.constants, s.budget, history, l + 1);
    }
    std::vector<MarginalCostTable> tables;
    const auto plan = siftmoe_select(s, ctx, &tables);
    double realized = 0.0;
    for (auto mode : transmissions(s)) {
      LayerOutcome o;
      if (plan) {
        o = evaluate_plan(s, ctx, *plan, mode);
        o.token_energy_j = detail::token_energies(o.plan, tables);
        for (double b : o.plan.bounds) realized = std::max(realized, b);
      } else {
        o = evaluate_topk(s, ctx, false, mode);
        o.infeasible = true;
        for (double b : o.plan.bounds) realized = std::max(realized, b);
      }
      o.eta = ctx.eta;
      const auto name = scheme_name("siftmoe", s, mode);
      rows.push_back(make_row(name, sweep_value, trial, l, o));
      if (details) (*details)[name].push_back(std::move(o));
    }
    history.push_back(s.kappa_history == KappaHistory::kRealized ? realized : ctx.eta);
  }
  return rows;
}

inline std::vector<ReportRow> run_topk(const Scenario& s, const std::vector<error_budget::LayerTrace>& traces, bool ideal,
                                       int trial = 0, double sweep_value = 0.0, TrialDetails* details = nullptr) {
  std::vector<ReportRow> rows;
  const std::string base = ideal ? "ideal_topk" : "practical_topk";
  for (int l = 0; l < static_cast<int>(traces.size()); ++l) {
    LayerContext ctx{trial, l, &traces[static_cast<std::size_t>(l)], layer_fadings(s, trial, l), s.layer_cap};
    for (auto mode : transmissions(s)) {
      auto o = evaluate_topk(s, ctx, ideal, mode);
      const auto name = scheme_name(base, s, mode);
      rows.push_back(make_row(name, sweep_value, trial, l, o));
      if (details) (*details)[name].push_back(std::move(o));
    }
  }
  return rows;
}

inline std::vector<ReportRow> run_trial(const Scenario& s, int trial, double sweep_value = 0.0,
                                        TrialDetails* details = nullptr) {
  const auto traces = trial_traces(s, trial);
  auto rows = run_siftmoe(s, traces, trial, sweep_value, details);
  for (bool ideal : {true, false}) {
    auto more = run_topk(s, traces, ideal, trial, sweep_value, details);
    rows.insert(rows.end(), more.begin(), more.end());
  }
  return rows;
}

/// Aggregates of one scheme at one sweep point.
struct SchemeSummary {
  std::string scheme;
  double sweep_value = 0.0;
  double mean_energy_per_token_j = 0.0;
  double mean_latency_s = 0.0;
  double missed_token_rate = 0.0;
  double mean_bound = 0.0;
  int infeasible_layers = 0;
  int layers = 0;
};

struct EnergyReport {
  std::vector<ReportRow> rows;
  std::vector<SchemeSummary> summary;

  const SchemeSummary& find(const std::string& scheme, double sweep_value) const {
    for (const auto& s : summary)
      if (s.scheme == scheme && s.sweep_value == sweep_value) return s;
    throw std::out_of_range("no summary for scheme " + scheme);
  }
};

/// Per-token energy averages total energy over all layers of a trial,
/// divided by the token count, then over trials.
inline std::vector<SchemeSummary> summarize(const std::vector<ReportRow>& rows, int num_tokens) {
  struct Acc {
    std::map<int, double> trial_energy;
    double latency = 0.0;
    double missed = 0.0;
    double bound = 0.0;
    int infeasible = 0;
    int layers = 0;
  };
  std::vector<std::pair<std::string, double>> order;
  std::map<std::pair<std::string, double>, Acc> acc;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.scheme, r.sweep_value);
    if (!acc.count(key)) order.push_back(key);
    auto& a = acc[key];
    a.trial_energy[r.trial] += r.energy_j;
    a.latency += r.latency_s;
    a.missed += r.missed_tokens;
    a.bound += r.mean_bound;
    a.infeasible += r.infeasible ? 1 : 0;
    ++a.layers;
  }
  std::vector<SchemeSummary> out;
  const double tokens = std::max(1, num_tokens);
  for (const auto& key : order) {
    const auto& a = acc[key];
    SchemeSummary s;
    s.scheme = key.first;
    s.sweep_value = key.second;
    double total = 0.0;
    for (const auto& [trial, e] : a.trial_energy) total += e / tokens;
    s.mean_energy_per_token_j = total / static_cast<double>(a.trial_energy.size());
    s.mean_latency_s = a.latency / a.layers;
    s.missed_token_rate = a.missed / (static_cast<double>(a.layers) * tokens);
    s.mean_bound = a.bound / a.layers;
    s.infeasible_layers = a.infeasible;
    s.layers = a.layers;
    out.push_back(s);
  }
  return out;
}

/// Runs fn(i) for i in [0, n) on up to hardware_concurrency threads; each
/// index writes only its own output slot.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::max(1, std::min<int>(n, static_cast<int>(std::thread::hardware_concurrency())));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline int tokens_per_layer(const Scenario& s) {
  return s.fixed_traces.empty() ? s.traces.tokens : static_cast<int>(s.fixed_traces.front().num_tokens());
}

/// All schemes over all trials. Trial 0 details are captured on request.
inline EnergyReport run_scenario(const Scenario& s, double sweep_value = 0.0, TrialDetails* trial0 = nullptr) {
  s.validate();
  std::vector<std::vector<ReportRow>> per_trial(static_cast<std::size_t>(s.trials));
  parallel_for(s.trials, [&](int t) {
    per_trial[static_cast<std::size_t>(t)] = run_trial(s, t, sweep_value, t == 0 ? trial0 : nullptr);
  });
  EnergyReport report;
  for (auto& rows : per_trial) report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  report.summary = summarize(report.rows, tokens_per_layer(s));
  return report;
}

enum class SweepAxis { kBandwidth, kDeadline, kErrorBudget };

inline SweepAxis parse_axis(const std::string& name) {
  if (name == "bandwidth") return SweepAxis::kBandwidth;
  if (name == "deadline") return SweepAxis::kDeadline;
  if (name == "error_budget") return SweepAxis::kErrorBudget;
  throw std::invalid_argument("unknown sweep axis '" + name + "' (bandwidth|deadline|error_budget)");
}

/// Bandwidth values are in MHz per helper, deadlines in seconds, error
/// budgets are the direct per-layer cap.
inline Scenario apply_axis(Scenario s, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::kBandwidth:
      for (auto& node : s.nodes)
        if (node.link) node.link->bandwidth_hz = value * 1e6;
      break;
    case SweepAxis::kDeadline:
      s.model.layer_deadline_s = value;
      break;
    case SweepAxis::kErrorBudget:
      s.budget_mode = BudgetMode::kDirectCap;
      s.layer_cap = value;
      break;
  }
  return s;
}

/// Re-runs every scheme at each grid point. Seeds do not depend on the grid
/// point, so all points and schemes see the same traces and fading.
inline EnergyReport sweep(const Scenario& s, SweepAxis axis, const std::vector<double>& grid) {
  EnergyReport report;
  for (double value : grid) {
    auto point = run_scenario(apply_axis(s, axis, value), value);
    report.rows.insert(report.rows.end(), point.rows.begin(), point.rows.end());
    report.summary.insert(report.summary.end(), point.summary.begin(), point.summary.end());
  }
  return report;
}

}  // namespace siftmoe::harness
