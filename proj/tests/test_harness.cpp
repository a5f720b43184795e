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

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "siftmoe/siftmoe.hpp"
#include "test_support.hpp"

using namespace siftmoe;
using namespace siftmoe::harness;

namespace {

error_budget::LayerTrace forced_layer(int tokens, int experts, std::vector<int> top) {
  std::mt19937_64 rng(5);
  auto layer = testsupport::random_layer(rng, tokens, experts, static_cast<int>(top.size()));
  for (auto& tok : layer.tokens) {
    // rebuild the cosine block for the new top set from a symmetric matrix
    std::vector<std::vector<double>> cosm(experts, std::vector<double>(experts, 0.5));
    for (int i = 0; i < experts; ++i) cosm[i][i] = 1.0;
    tok.top_set = top;
    tok.cosine.clear();
    for (int i : top)
      for (int j = 0; j < experts; ++j) tok.cosine.push_back(cosm[i][j]);
  }
  return layer;
}

Scenario small_switch(int tokens, std::uint64_t seed = 3) {
  auto s = preset_switch(seed);
  s.trials = 4;
  s.traces.tokens = tokens;
  return s;
}

LayerContext context(const Scenario& s, const std::vector<error_budget::LayerTrace>& traces, int trial, int layer) {
  return LayerContext{trial, layer, &traces[layer], layer_fadings(s, trial, layer), s.layer_cap};
}

}  // namespace

TEST(Traces, Reproducible) {
  TraceGenSpec spec;
  spec.tokens = 5;
  spec.seed = 42;
  std::ostringstream a, b, c;
  write_traces(a, generate_traces(spec, 3, 8, 2));
  write_traces(b, generate_traces(spec, 3, 8, 2));
  spec.seed = 43;
  write_traces(c, generate_traces(spec, 3, 8, 2));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str(), c.str());
}

TEST(Traces, WellFormed) {
  TraceGenSpec spec;
  spec.tokens = 20;
  spec.cos_jitter = 2.0;  // forces clipping
  for (int k : {1, 2, 3}) {
    const auto layers = generate_traces(spec, 4, 8, k);
    for (const auto& layer : layers) {
      layer.validate();
      for (const auto& tok : layer.tokens) {
        EXPECT_EQ(static_cast<int>(tok.top_set.size()), k);
        for (double g : tok.gating) EXPECT_GT(g, 0.0);
        EXPECT_TRUE(std::is_sorted(tok.gating.rbegin(), tok.gating.rend()));
      }
    }
  }
}

TEST(Traces, HighConcentrationIsUniform) {
  TraceGenSpec spec;
  spec.tokens = 50;
  spec.gating_concentration = 1e7;
  for (const auto& layer : generate_traces(spec, 2, 8, 2))
    for (const auto& tok : layer.tokens)
      for (double g : tok.gating) EXPECT_NEAR(g, 0.5, 1e-2);
}

TEST(Traces, ZeroJitter) {
  TraceGenSpec spec;
  spec.tokens = 10;
  spec.cos_jitter = 0.0;
  spec.cos_base = 0.37;
  for (const auto& layer : generate_traces(spec, 2, 6, 2))
    for (const auto& tok : layer.tokens)
      for (std::size_t r = 0; r < 2; ++r)
        for (int j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(tok.cos(r, j), j == tok.top_set[r] ? 1.0 : 0.37);
}

TEST(Traces, JsonRoundTrip) {
  TraceGenSpec spec;
  spec.tokens = 7;
  const auto layers = generate_traces(spec, 3, 8, 2);
  std::stringstream ss;
  write_traces(ss, layers);
  const auto back = read_traces(ss);
  ASSERT_EQ(back.size(), layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    ASSERT_EQ(back[l].tokens.size(), layers[l].tokens.size());
    for (std::size_t m = 0; m < layers[l].tokens.size(); ++m) {
      EXPECT_EQ(back[l].tokens[m].top_set, layers[l].tokens[m].top_set);
      EXPECT_EQ(back[l].tokens[m].gating, layers[l].tokens[m].gating);
      EXPECT_EQ(back[l].tokens[m].cosine, layers[l].tokens[m].cosine);
    }
  }
  std::stringstream bad("{\"layer\": 0}\n");
  EXPECT_THROW(read_traces(bad), std::runtime_error);
}

TEST(Harness, TopKSingleTokenOnUser) {
  auto s = small_switch(1);
  s.model.num_layers = 1;
  s.constants = uniform_constants(1, 300.0, 1.1);
  s.fixed_traces = {forced_layer(1, 8, {0})};
  for (bool ideal : {true, false}) {
    const auto rows = run_topk(s, s.fixed_traces, ideal);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_DOUBLE_EQ(rows[0].energy_j, cost::local_energy(s.nodes[0], s.model, 1));
    EXPECT_EQ(rows[0].missed_tokens, 0);
  }
}

TEST(Harness, PracticalMissesOverflow) {
  auto s = small_switch(10);
  s.model.num_layers = 1;
  s.constants = uniform_constants(1, 300.0, 1.1);
  s.model.flops_per_token = 0.1 * s.nodes[1].compute_flops;
  s.user_max_power_w = 1e6;
  s.fixed_traces = {forced_layer(10, 8, {1})};
  const auto ctx = context(s, s.fixed_traces, 0, 0);
  const int cap = node_capacity(s, ctx, 1);
  ASSERT_GT(cap, 0);
  ASSERT_LT(cap, 10);
  const auto practical = evaluate_topk(s, ctx, false, Transmission::kSlowOptimal);
  EXPECT_EQ(practical.missed_tokens, 10 - cap);
  const auto ideal = evaluate_topk(s, ctx, true, Transmission::kSlowOptimal);
  EXPECT_EQ(ideal.missed_tokens, 0);
  // missed tokens carry the skip deviation of their only expert
  for (std::size_t m = 0; m < 10; ++m) {
    const auto& tok = s.fixed_traces[0].tokens[m];
    EXPECT_DOUBLE_EQ(practical.plan.bounds[m], static_cast<int>(m) < cap ? 0.0 : tok.output_norms[1]);
  }
}

TEST(Harness, ZeroBudgetReproducesTopK) {
  for (auto make : {preset_switch, preset_mixtral}) {
    auto s = make(11);
    s.trials = 3;
    s.layer_cap = 0.0;
    for (int t = 0; t < s.trials; ++t) {
      TrialDetails d;
      run_trial(s, t, 0.0, &d);
      const auto& ours = d.at("siftmoe");
      const auto& ideal = d.at("ideal_topk");
      for (std::size_t l = 0; l < ours.size(); ++l) {
        if (ours[l].infeasible) continue;
        EXPECT_EQ(ours[l].plan.token_nodes, ideal[l].plan.token_nodes);
        EXPECT_EQ(ours[l].plan.loads, ideal[l].plan.loads);
        EXPECT_DOUBLE_EQ(ours[l].energy_j, ideal[l].energy_j);
      }
    }
  }
}

TEST(Harness, DeterministicFadingFastEqualsSlow) {
  for (auto make : {preset_switch, preset_mixtral}) {
    auto s = make(12);
    s.trials = 2;
    s.fading.kind = channel::Deterministic{0.9};
    const auto slow = run_scenario(s);
    s.regime = Regime::kFast;
    const auto fast = run_scenario(s);
    for (const std::string base : {"siftmoe", "ideal_topk", "practical_topk"}) {
      const double e = slow.find(base, 0.0).mean_energy_per_token_j;
      for (const char* mode : {"_dynamic", "_uniform"})
        EXPECT_NEAR(fast.find(base + mode, 0.0).mean_energy_per_token_j, e, 1e-9 * e) << base << mode;
    }
  }
}

TEST(Harness, SingleTokenPicksCheapestNode) {
  auto s = small_switch(1);
  s.trials = 1;
  s.layer_cap = 1e9;
  const auto traces = trial_traces(s, 0);
  TrialDetails d;
  run_siftmoe(s, traces, 0, 0.0, &d);
  for (int l = 0; l < s.model.num_layers; ++l) {
    const auto ctx = context(s, traces, 0, l);
    const auto tables = layer_tables(s, ctx, 1);
    int best = -1;
    for (int v = 0; v < s.num_nodes(); ++v)
      if (tables[v].d_max >= 1 && (best < 0 || tables[v].cost(1) < tables[best].cost(1))) best = v;
    EXPECT_EQ(d.at("siftmoe")[l].plan.token_nodes[0], std::vector<int>{best});
  }
}

TEST(Harness, LayerObjectiveMatchesBruteForce) {
  for (auto make : {preset_switch, preset_mixtral}) {
    auto s = make(13);
    s.traces.tokens = 4;
    s.layer_cap = make == preset_switch ? 250.0 : 1.2;
    for (int t = 0; t < 3; ++t) {
      const auto traces = trial_traces(s, t);
      for (int l = 0; l < s.model.num_layers; ++l) {
        const auto ctx = context(s, traces, t, l);
        std::vector<cost::MarginalCostTable> tables;
        const auto plan = siftmoe_select(s, ctx, &tables);
        if (!plan) continue;
        const auto feasible = selection::build_feasible_sets(traces[l], tables, ctx.eta, s.model.top_k);
        const auto oracle = selection::brute_force(feasible, tables, 1e7);
        EXPECT_NEAR(plan->objective_j, oracle.plan.objective_j, 1e-12 * oracle.plan.objective_j);
        EXPECT_TRUE(validate_plan(s, ctx, *plan).empty());
      }
    }
  }
}

TEST(Harness, SiftmoeNotAbovePractical) {
  auto s = preset_switch(14);
  s.trials = 10;
  const auto report = run_scenario(s);
  std::map<std::pair<int, int>, double> ours, theirs;
  std::map<std::pair<int, int>, bool> fallback, missed;
  for (const auto& r : report.rows) {
    const auto key = std::make_pair(r.trial, r.layer);
    if (r.scheme == "siftmoe") {
      ours[key] = r.energy_j;
      fallback[key] = r.infeasible;
    }
    if (r.scheme == "practical_topk") {
      theirs[key] = r.energy_j;
      missed[key] = r.missed_tokens > 0;
    }
  }
  for (const auto& [key, e] : ours) {
    if (fallback[key] || missed[key]) continue;
    EXPECT_LE(e, theirs[key] * (1.0 + 1e-12));
  }
}

TEST(Harness, ValidatorCatchesViolations) {
  auto s = small_switch(6);
  const auto traces = trial_traces(s, 0);
  const auto ctx = context(s, traces, 0, 0);
  auto plan = *siftmoe_select(s, ctx);
  EXPECT_TRUE(validate_plan(s, ctx, plan).empty());

  auto empty = plan;
  empty.token_nodes[0].clear();
  empty.mappings[0].targets.assign(empty.mappings[0].targets.size(), error_budget::kSkip);
  const auto v1 = validate_plan(s, ctx, empty);
  ASSERT_FALSE(v1.empty());
  EXPECT_NE(v1[0].find("0 nodes selected"), std::string::npos);

  auto tight = s;
  tight.model.flops_per_token = 0.3 * s.nodes[1].compute_flops;  // two tokens per helper at most
  auto over = plan;
  for (auto& nodes : over.token_nodes) nodes = {1};
  for (std::size_t m = 0; m < over.mappings.size(); ++m) over.mappings[m].targets = {1};
  over.loads.assign(s.nodes.size(), 0);
  over.loads[1] = static_cast<int>(over.token_nodes.size());
  PlanCheck loose;
  loose.check_bound = false;
  loose.check_objective = false;
  bool found = false;
  for (const auto& v : validate_plan(tight, ctx, over, loose)) found = found || v.find("D_v > D_max") != std::string::npos;
  EXPECT_TRUE(found);
}

TEST(Harness, SolverPlansValidateAcrossSeeds) {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    auto s = seed % 2 ? preset_switch(seed) : preset_mixtral(seed);
    s.traces.tokens = 3 + static_cast<int>(seed % 4);
    const auto traces = trial_traces(s, 0);
    for (int l = 0; l < s.model.num_layers; ++l) {
      const auto ctx = context(s, traces, 0, l);
      if (auto plan = siftmoe_select(s, ctx)) {
        const auto v = validate_plan(s, ctx, *plan);
        EXPECT_TRUE(v.empty()) << "seed " << seed << ": " << (v.empty() ? "" : v[0]);
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(Harness, SweepSinglePointEqualsRun) {
  auto s = small_switch(6);
  const auto run = run_scenario(apply_axis(s, SweepAxis::kBandwidth, 1.0), 1.0);
  const auto sw = sweep(s, SweepAxis::kBandwidth, {1.0});
  ASSERT_EQ(run.rows.size(), sw.rows.size());
  for (std::size_t i = 0; i < run.rows.size(); ++i) EXPECT_EQ(run.rows[i].energy_j, sw.rows[i].energy_j);
}

TEST(Harness, ReportBytesDeterministic) {
  auto s = small_switch(6);
  s.regime = Regime::kFast;
  std::string out[2];
  for (auto& text : out) {
    TrialDetails d;
    const auto r = run_scenario(s, 0.0, &d);
    std::ostringstream os;
    write_report_csv(os, r.rows);
    write_plan_csv(os, d.at("siftmoe_dynamic"));
    write_slots_csv(os, d.at("siftmoe_dynamic"));
    text = os.str();
  }
  EXPECT_EQ(out[0], out[1]);
  EXPECT_EQ(out[0].substr(0, out[0].find('\n')),
            "scheme,sweep_value,trial,layer,energy_j,latency_s,missed_tokens,mean_bound");
}

TEST(Harness, PlanCsvRoundTrip) {
  auto s = small_switch(6);
  TrialDetails d;
  run_trial(s, 0, 0.0, &d);
  std::stringstream ss;
  write_plan_csv(ss, d.at("siftmoe"));
  const auto plans = read_plan_csv(ss, s.num_nodes());
  const auto traces = trial_traces(s, 0);
  ASSERT_EQ(plans.size(), static_cast<std::size_t>(s.model.num_layers));
  for (const auto& [l, plan] : plans) {
    EXPECT_EQ(plan.token_nodes, d.at("siftmoe")[l].plan.token_nodes);
    PlanCheck check;
    check.tolerance = 1e-6;
    EXPECT_TRUE(validate_plan(s, context(s, traces, 0, l), plan, check).empty());
  }
}

TEST(Config, ParsesUnitsAndOverrides) {
  std::istringstream is(R"(
[scenario]
preset = mixtral
trials = 7
regime = fast
slot_s = 0.02
[radio]
bandwidth_mhz = 3.5
helper_power_dbm = 30
[model]
deadline_s = 0.09
[budget]
layer_cap = 0.8
[fading]
shape = 3
)");
  const auto s = load_config(is);
  EXPECT_EQ(s.trials, 7);
  EXPECT_EQ(s.regime, Regime::kFast);
  EXPECT_DOUBLE_EQ(s.slot_s, 0.02);
  EXPECT_DOUBLE_EQ(s.nodes[3].link->bandwidth_hz, 3.5e6);
  EXPECT_NEAR(s.nodes[3].link->tx_power_helper_w, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(s.model.layer_deadline_s, 0.09);
  EXPECT_DOUBLE_EQ(s.layer_cap, 0.8);
  EXPECT_EQ(s.model.top_k, 2);
  EXPECT_DOUBLE_EQ(std::get<channel::GammaFading>(s.fading.kind).shape, 3.0);
}

TEST(Config, RejectsUnknownKeys) {
  std::istringstream is("[radio]\nbandwith_mhz = 2\n");
  EXPECT_THROW(load_config(is), std::runtime_error);
  std::istringstream bad("[scenario]\nregime = medium\n");
  EXPECT_THROW(load_config(bad), std::runtime_error);
}
