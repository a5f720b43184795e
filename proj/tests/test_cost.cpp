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

#include "siftmoe/cost.hpp"
#include "siftmoe/harness/scenario.hpp"

using namespace siftmoe;
using namespace siftmoe::cost;

namespace {

NodeParams test_user() {
  NodeParams u;
  u.node_id = 0;
  u.compute_flops = 10.0;
  u.load_latency_s = 0.1;
  u.load_power_w = 5.0;     // 0.5 J per load
  u.compute_power_w = 1.0;  // 0.1 J per token at phi/C = 0.1
  return u;
}

// Downlink 1 Mbit/s at unit fading, N0 B = 1 W, unit path gain.
NodeParams test_helper(int id = 1) {
  NodeParams h;
  h.node_id = id;
  h.compute_flops = 10.0;
  channel::LinkParams l;
  l.distance_m = 1.0;
  l.path_loss_exp = 2.0;
  l.bandwidth_hz = 1e6;
  l.noise_psd_w_per_hz = 1e-6;
  l.tx_power_helper_w = 1.0;
  h.link = l;
  return h;
}

ModelParams test_model(double deadline = 1.0) {
  ModelParams m;
  m.hidden_bits = 1e5;  // 0.1 s downlink per token
  m.flops_per_token = 1.0;
  m.layer_deadline_s = deadline;
  return m;
}

}  // namespace

TEST(Cost, LocalEnergyExamples) {
  const auto u = test_user();
  const auto m = test_model();
  EXPECT_EQ(local_energy(u, m, 0), 0.0);
  EXPECT_NEAR(local_energy(u, m, 1), 0.6, 1e-12);
  EXPECT_NEAR(local_energy(u, m, 5), 1.0, 1e-12);
}

TEST(Cost, LocalLatencyExamples) {
  auto u = test_user();
  u.compute_flops = 50.0;  // phi/C = 0.02
  const auto m = test_model();
  EXPECT_EQ(local_latency(u, m, 0), 0.0);
  EXPECT_NEAR(local_latency(u, m, 1), 0.12, 1e-12);
  EXPECT_NEAR(local_latency(u, m, 10), 0.3, 1e-12);
}

TEST(Cost, HelperTimeBudget) {
  const auto h = test_helper();
  const auto m = test_model();
  EXPECT_NEAR(helper_time_budget(h, m, 1.0, 1), 0.8, 1e-12);
  EXPECT_NEAR(helper_time_budget(h, m, 1.0, 5), 0.0, 1e-12);
  EXPECT_FALSE(helper_load_feasible(h, m, 1.0, 5));
  EXPECT_THROW(helper_energy(h, m, {1.0, 1.0}, 5), std::domain_error);
}

TEST(Cost, HelperEnergyUnitPrefactor) {
  // Scale N0 so that N0 B t / g = 1 for the window t of a single token.
  auto h = test_helper();
  const auto m = test_model();
  const double t = helper_time_budget(h, m, 1.0, 1);
  ASSERT_NEAR(t, 0.8, 1e-12);
  const double n0 = h.link->noise_psd_w_per_hz;
  h.link->noise_psd_w_per_hz = 1.0 / (1e6 * t);
  // The downlink rate moved with N0, so take the window again.
  const double t2 = helper_time_budget(h, m, 1.0, 1);
  const double expected = std::expm1(1e5 / (1e6 * t2) * std::log(2.0)) * (1.0 / (1e6 * t)) * 1e6 * t2;
  EXPECT_NEAR(helper_energy(h, m, {1.0, 1.0}, 1), expected, 1e-12);
  EXPECT_EQ(helper_energy(h, m, {1.0, 1.0}, 0), 0.0);
  h.link->noise_psd_w_per_hz = n0;
  EXPECT_NEAR(helper_energy(h, m, {1.0, 1.0}, 1), std::expm1(0.125 * std::log(2.0)) * 0.8, 1e-12);
}

TEST(Cost, HelperEnergyOneJoule) {
  // d = 2 at 0.25 s per token leaves 0.5 s; d b = B t and N0 B t / g = 1.
  auto h = test_helper();
  auto m = test_model();
  m.flops_per_token = 2.0;
  m.hidden_bits = 5e4;
  h.link->bandwidth_hz = 2e5;
  h.link->noise_psd_w_per_hz = 1e-5;
  h.link->tx_power_helper_w = 62.0;  // SNR 31, downlink 1 Mbit/s
  ASSERT_NEAR(helper_time_budget(h, m, 1.0, 2), 0.5, 1e-12);
  EXPECT_NEAR(helper_energy(h, m, {1.0, 1.0}, 2), 1.0, 1e-12);
}

TEST(Cost, MaxLoadExamples) {
  auto h = test_helper();
  auto m = test_model();
  m.flops_per_token = 2.0;  // 0.2 + 0.1 = 0.3 s per token
  EXPECT_EQ(max_load(h, m, 1.0), 3);
  m.flops_per_token = 1.0;  // 0.2 s per token, d = 5 lands on 0
  EXPECT_EQ(max_load(h, m, 1.0), 4);
  auto u = test_user();
  auto tight = test_model(0.05);
  EXPECT_EQ(max_load(u, tight, 1.0), 0);
  EXPECT_EQ(max_load(u, test_model(1.0), 1.0), 9);
}

TEST(Cost, MaxLoadMatchesScan) {
  const auto s = harness::preset_mixtral(3);
  for (const auto& node : s.nodes) {
    for (double h : {0.05, 0.4, 1.0, 3.0}) {
      int scan = 0;
      for (int d = 1; d < 100000; ++d) {
        bool ok;
        if (node.is_user()) {
          ok = node.load_latency_s + d * s.model.flops_per_token / node.compute_flops <= s.model.layer_deadline_s;
        } else {
          const double rdl = node.link->bandwidth_hz *
                             std::log2(1.0 + node.link->tx_power_helper_w *
                                                 std::pow(node.link->distance_m, -node.link->path_loss_exp) * h /
                                                 (node.link->noise_psd_w_per_hz * node.link->bandwidth_hz));
          const double budget =
              s.model.layer_deadline_s - d * (s.model.flops_per_token / node.compute_flops + s.model.hidden_bits / rdl);
          ok = budget > 1e-9 && budget >= node.load_latency_s;
        }
        if (!ok) break;
        scan = d;
      }
      EXPECT_EQ(max_load(node, s.model, h), scan) << "node " << node.node_id << " h " << h;
    }
  }
}

TEST(Cost, UserMarginalTable) {
  const auto u = test_user();
  const auto t = marginal_costs(u, test_model(), {}, 4);
  ASSERT_EQ(t.d_max, 4);
  EXPECT_NEAR(t.cost(1), 0.6, 1e-12);
  for (int d = 2; d <= 4; ++d) EXPECT_NEAR(t.cost(d), 0.1, 1e-12);
  const auto empty = marginal_costs(u, test_model(0.05), {});
  EXPECT_EQ(empty.d_max, 0);
  EXPECT_TRUE(empty.costs.empty());
}

TEST(Cost, HelperTablesConvexAndExact) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    auto h = test_helper();
    h.link->distance_m = 1.0 + 149.0 * U(rng);
    h.link->path_loss_exp = 2.0 + 2.0 * U(rng);
    h.link->bandwidth_hz = 1e5 + 4e6 * U(rng);
    h.link->noise_psd_w_per_hz = 4e-21;
    h.link->tx_power_helper_w = 6.3;
    h.compute_flops = 1e12 * (1.0 + 50.0 * U(rng));
    ModelParams m;
    m.hidden_bits = 1e4 * (1.0 + 10.0 * U(rng));
    m.flops_per_token = 1e9 * (1.0 + 100.0 * U(rng));
    m.layer_deadline_s = 0.05 + U(rng);
    const LinkFading f{0.1 + 2.0 * U(rng), 0.1 + 2.0 * U(rng)};
    const auto t = marginal_costs(h, m, f, 200);
    double prefix = 0.0;
    for (int d = 1; d <= t.d_max; ++d) {
      prefix += t.cost(d);
      const double e = helper_energy(h, m, f, d);
      EXPECT_NEAR(prefix, e, 1e-12 * std::max(1.0, e));
      EXPECT_GT(t.cost(d), 0.0);
      if (d > 1) {
        EXPECT_GE(t.cost(d), t.cost(d - 1) * (1.0 - 1e-12));
      }
    }
  }
}

TEST(Cost, ShorterWindowNeverCheaper) {
  const auto h = test_helper();
  const auto m = test_model();
  for (int d = 1; d <= 4; ++d) {
    const double budget = helper_time_budget(h, m, 1.0, d);
    const double best = channel::uplink_energy(*h.link, 1.0, d * m.hidden_bits, budget);
    for (double frac : {0.3, 0.6, 0.9})
      EXPECT_GE(channel::uplink_energy(*h.link, 1.0, d * m.hidden_bits, budget * frac), best);
  }
}
