// Copyright 2026 The advsuffix Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Shared fixtures and hand-rolled generators for the test suites.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "advsuffix/beam_optimizer.hpp"
#include "advsuffix/token_space.hpp"
#include "advsuffix/util.hpp"

namespace advsuffix::testing {

inline std::filesystem::path data_dir() { return ADVSUFFIX_DATA_DIR; }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("advsuffix_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Vocabulary whose tokens are exactly the given texts, in order.
inline Vocabulary vocab_of(std::vector<std::string> texts) { return Vocabulary(std::move(texts)); }

/// Every printable ASCII character plus the given multi-character tokens.
inline Vocabulary ascii_vocab(const std::vector<std::string>& extra = {}) {
  std::vector<std::string> t;
  for (int c = 32; c < 127; ++c) t.emplace_back(1, static_cast<char>(c));
  for (const auto& e : extra) t.push_back(e);
  return Vocabulary(std::move(t));
}

/// Random string over the characters that appear in `vocab`'s single-char
/// tokens.
inline std::string random_text(Rng& rng, std::size_t max_len, const std::string& alphabet) {
  const std::size_t n = rng.uniform_index(max_len + 1);
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += alphabet[rng.uniform_index(alphabet.size())];
  return s;
}

inline std::vector<double> random_distribution(Rng& rng, std::size_t n, double zero_prob = 0.0) {
  std::vector<double> p(n);
  double sum = 0.0;
  for (auto& x : p) {
    x = rng.uniform01() < zero_prob ? 0.0 : rng.uniform01() + 1e-3;
    sum += x;
  }
  if (sum == 0.0) {
    p[rng.uniform_index(n)] = 1.0;
    return p;
  }
  for (auto& x : p) x /= sum;
  return p;
}

inline Embedding random_embedding(Rng& rng, std::size_t d) {
  Embedding e(d);
  do {
    for (auto& x : e) x = rng.normal();
  } while (norm(e) == 0.0);
  return e;
}

/// Target that answers from a fixed map of prompt text to embedding and
/// counts calls.
class CountingTarget final : public TargetModel {
 public:
  explicit CountingTarget(const TargetModel& inner) : inner_(inner) {}
  std::size_t dimension() const override { return inner_.dimension(); }
  Embedding generate(std::string_view prompt, std::uint64_t seed) const override {
    ++calls;
    return inner_.generate(prompt, seed);
  }
  mutable std::atomic<long> calls{0};

 private:
  const TargetModel& inner_;
};

}  // namespace advsuffix::testing
