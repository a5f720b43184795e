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
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "siftmoe/channel.hpp"
#include "siftmoe/error_budget.hpp"
#include "siftmoe/harness/scenario.hpp"

namespace siftmoe::harness {

using error_budget::LayerTrace;
using error_budget::TokenTrace;

namespace detail {

inline std::vector<double> dirichlet(std::mt19937_64& rng, std::size_t n, double concentration) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::vector<double> w(n);
  double sum = 0.0;
  for (auto& x : w) {
    x = gamma(rng);
    sum += x;
  }
  if (!(sum > 0)) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(n));
    return w;
  }
  for (auto& x : w) x /= sum;
  return w;
}

}  // namespace detail

/// Synthetic routing statistics for `num_layers` layers. Each layer gets an
/// expert popularity profile and a symmetric output-cosine matrix; each
/// token draws its Top-K set from the popularity profile, Dirichlet gating
/// scores sorted high to low, and per-expert output norms.
inline std::vector<LayerTrace> generate_traces(const TraceGenSpec& spec, int num_layers, int num_experts, int top_k) {
  spec.validate();
  if (top_k < 1 || top_k > num_experts) throw std::invalid_argument("generate_traces: need 1 <= K <= N");
  const auto n = static_cast<std::size_t>(num_experts);
  const auto k = static_cast<std::size_t>(top_k);
  std::vector<LayerTrace> layers;
  for (int l = 0; l < num_layers; ++l) {
    std::mt19937_64 rng(channel::stream_seed(spec.seed, static_cast<std::uint64_t>(l), 0x7ace));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const auto popularity = detail::dirichlet(rng, n, spec.popularity_concentration);
    std::vector<double> cosine(n * n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double c = std::clamp(spec.cos_base + spec.cos_jitter * (2.0 * unit(rng) - 1.0), -1.0, 1.0);
        cosine[i * n + j] = c;
        cosine[j * n + i] = c;
      }
    }

    LayerTrace trace;
    trace.layer_id = l;
    trace.num_experts = num_experts;
    for (int m = 0; m < spec.tokens; ++m) {
      TokenTrace tok;
      std::vector<double> weights = popularity;
      for (std::size_t r = 0; r < k; ++r) {
        std::discrete_distribution<int> pick(weights.begin(), weights.end());
        const int e = pick(rng);
        tok.top_set.push_back(e);
        weights[static_cast<std::size_t>(e)] = 0.0;
      }
      tok.gating = detail::dirichlet(rng, k, spec.gating_concentration);
      std::sort(tok.gating.begin(), tok.gating.end(), std::greater<>());
      tok.output_norms.resize(n);
      for (auto& v : tok.output_norms) v = spec.norm_lo + (spec.norm_hi - spec.norm_lo) * unit(rng);
      for (int e : tok.top_set) {
        const auto row = static_cast<std::size_t>(e) * n;
        tok.cosine.insert(tok.cosine.end(), cosine.begin() + static_cast<std::ptrdiff_t>(row),
                          cosine.begin() + static_cast<std::ptrdiff_t>(row + n));
      }
      trace.tokens.push_back(std::move(tok));
    }
    layers.push_back(std::move(trace));
  }
  return layers;
}

/// One JSON object per (layer, token) line.
inline void write_traces(std::ostream& os, const std::vector<LayerTrace>& layers) {
  for (const auto& layer : layers) {
    const auto n = static_cast<std::size_t>(layer.num_experts);
    for (std::size_t m = 0; m < layer.tokens.size(); ++m) {
      const auto& tok = layer.tokens[m];
      nlohmann::json rows = nlohmann::json::array();
      for (std::size_t r = 0; r < tok.top_set.size(); ++r) {
        rows.push_back(std::vector<double>(tok.cosine.begin() + static_cast<std::ptrdiff_t>(r * n),
                                           tok.cosine.begin() + static_cast<std::ptrdiff_t>((r + 1) * n)));
      }
      nlohmann::json line = {{"layer", layer.layer_id}, {"token", m},           {"num_experts", layer.num_experts},
                             {"top", tok.top_set},      {"gating", tok.gating}, {"norms", tok.output_norms},
                             {"cosine", rows}};
      os << line.dump() << '\n';
    }
  }
}

inline std::vector<LayerTrace> read_traces(std::istream& is) {
  std::map<int, std::map<std::size_t, TokenTrace>> by_layer;
  std::map<int, int> experts;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(is, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(text);
      TokenTrace tok;
      tok.top_set = j.at("top").get<std::vector<int>>();
      tok.gating = j.at("gating").get<std::vector<double>>();
      tok.output_norms = j.at("norms").get<std::vector<double>>();
      for (const auto& row : j.at("cosine")) {
        const auto values = row.get<std::vector<double>>();
        tok.cosine.insert(tok.cosine.end(), values.begin(), values.end());
      }
      const int layer = j.at("layer").get<int>();
      experts[layer] = j.at("num_experts").get<int>();
      by_layer[layer][j.at("token").get<std::size_t>()] = std::move(tok);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("trace line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::vector<LayerTrace> layers;
  for (auto& [layer, tokens] : by_layer) {
    LayerTrace trace;
    trace.layer_id = layer;
    trace.num_experts = experts[layer];
    std::size_t expect = 0;
    for (auto& [m, tok] : tokens) {
      if (m != expect++) throw std::runtime_error("trace file: token indices of layer " + std::to_string(layer) + " are not contiguous");
      trace.tokens.push_back(std::move(tok));
    }
    trace.validate();
    layers.push_back(std::move(trace));
  }
  return layers;
}

inline std::vector<LayerTrace> read_traces_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file " + path);
  return read_traces(in);
}

}  // namespace siftmoe::harness
