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

#include <fmt/format.h>

#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "siftmoe/harness/runner.hpp"

namespace siftmoe::harness {

inline std::string fmt_float(double x) { return fmt::format("{:.9g}", x); }

inline std::string join_ints(const std::vector<int>& v, const char* skip = nullptr) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ';';
    out += (skip && v[i] == error_budget::kSkip) ? std::string(skip) : std::to_string(v[i]);
  }
  return out;
}

inline std::vector<int> split_ints(const std::string& field, const char* skip = nullptr) {
  std::vector<int> out;
  if (field.empty()) return out;
  std::stringstream ss(field);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (skip && item == skip)
      out.push_back(error_budget::kSkip);
    else
      out.push_back(std::stoi(item));
  }
  return out;
}

inline void write_report_csv(std::ostream& os, const std::vector<ReportRow>& rows) {
  os << "scheme,sweep_value,trial,layer,energy_j,latency_s,missed_tokens,mean_bound\n";
  for (const auto& r : rows) {
    os << r.scheme << ',' << fmt_float(r.sweep_value) << ',' << r.trial << ',' << r.layer << ',' << fmt_float(r.energy_j)
       << ',' << fmt_float(r.latency_s) << ',' << r.missed_tokens << ',' << fmt_float(r.mean_bound) << '\n';
  }
}

inline void write_summary_csv(std::ostream& os, const std::vector<SchemeSummary>& summary) {
  os << "scheme,sweep_value,energy_per_token_j,latency_s,missed_token_rate,mean_bound,infeasible_layers,layers\n";
  for (const auto& s : summary) {
    os << s.scheme << ',' << fmt_float(s.sweep_value) << ',' << fmt_float(s.mean_energy_per_token_j) << ','
       << fmt_float(s.mean_latency_s) << ',' << fmt_float(s.missed_token_rate) << ',' << fmt_float(s.mean_bound) << ','
       << s.infeasible_layers << ',' << s.layers << '\n';
  }
}

/// One row per token: chosen nodes, expert mapping aligned with the Top-K
/// set ("skip" for dropped experts), bound and attributed energy.
inline void write_plan_csv(std::ostream& os, const std::vector<LayerOutcome>& layers) {
  os << "layer,token,nodes,mapping,bound,energy_j\n";
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& plan = layers[l].plan;
    for (std::size_t m = 0; m < plan.num_tokens(); ++m) {
      const double bound = m < plan.bounds.size() ? plan.bounds[m] : 0.0;
      const double energy = m < layers[l].token_energy_j.size() ? layers[l].token_energy_j[m] : 0.0;
      os << l << ',' << m << ',' << join_ints(plan.token_nodes[m]) << ',' << join_ints(plan.mappings[m].targets, "skip")
         << ',' << fmt_float(bound) << ',' << fmt_float(energy) << '\n';
    }
  }
}

inline void write_slots_csv(std::ostream& os, const std::vector<LayerOutcome>& layers) {
  os << "layer,helper,slot,gamma_bits,fading,energy_j\n";
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (const auto& sp : layers[l].slots) {
      for (int q = 0; q < sp.num_slots; ++q) {
        const auto qi = static_cast<std::size_t>(q);
        os << l << ',' << sp.helper_id << ',' << q << ',' << fmt_float(sp.bits_per_slot[qi]) << ','
           << fmt_float(sp.realized_fadings[qi]) << ',' << fmt_float(sp.energy_j[qi]) << '\n';
      }
    }
  }
}

/// Plans read back from a plan CSV, keyed by layer. Loads are recounted,
/// the objective is the sum of per-token energies.
inline std::map<int, SelectionPlan> read_plan_csv(std::istream& is, int num_nodes) {
  std::map<int, SelectionPlan> plans;
  std::string line;
  if (!std::getline(is, line) || line.rfind("layer,token,nodes,mapping", 0) != 0)
    throw std::runtime_error("plan csv: missing or unexpected header");
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 6) throw std::runtime_error(fmt::format("plan csv line {}: expected 6 fields", line_no));
    try {
      const int layer = std::stoi(f[0]);
      const auto token = static_cast<std::size_t>(std::stoi(f[1]));
      auto& plan = plans[layer];
      if (plan.num_nodes == 0) {
        plan.num_nodes = num_nodes;
        plan.loads.assign(static_cast<std::size_t>(num_nodes), 0);
      }
      if (token != plan.token_nodes.size())
        throw std::invalid_argument("tokens must be listed in order");
      plan.token_nodes.push_back(split_ints(f[2]));
      plan.mappings.push_back(error_budget::ExpertMapping{split_ints(f[3], "skip")});
      plan.bounds.push_back(std::stod(f[4]));
      plan.objective_j += std::stod(f[5]);
      for (int v : plan.token_nodes.back())
        if (v >= 0 && v < num_nodes) ++plan.loads[static_cast<std::size_t>(v)];
    } catch (const std::logic_error& e) {
      throw std::runtime_error(fmt::format("plan csv line {}: {}", line_no, e.what()));
    }
  }
  return plans;
}

inline void write_file(const std::string& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  body(os);
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace siftmoe::harness
