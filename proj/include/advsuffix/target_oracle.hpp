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

/**
 * Target oracle
 *
 * The black-box target maps prompt text to an output embedding; everything
 * downstream (alignment loss, unsafe classifier) consumes only cosine
 * similarities, so images never appear as pixels.
 *
 * HashingMockTarget is the desk-scale stand-in: word uni/bigrams are
 * feature-hashed into dimensions 1..d-1 and normalized, then a gain along
 * the unsafe axis (dimension 0) is added for every configured trigger word.
 * Optional seeded noise makes repeated generations differ the way a
 * diffusion sampler would.
 */

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "advsuffix/error.hpp"
#include "advsuffix/token_space.hpp"
#include "advsuffix/util.hpp"

namespace advsuffix {

using Embedding = std::vector<double>;

// ============================================================================
// Vector math
// ============================================================================

inline double dot(const Embedding& a, const Embedding& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Embedding& a) { return std::sqrt(dot(a, a)); }

/// Cosine similarity in [-1, 1].
inline double similarity(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::kDimensionMismatch,
         std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) fail(ErrorCode::kZeroVector, "cosine of zero vector");
  const double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

inline Embedding unit_axis(std::size_t dim, std::size_t axis) {
  Embedding e(dim, 0.0);
  e.at(axis) = 1.0;
  return e;
}

// ============================================================================
// Interfaces
// ============================================================================

class TargetModel {
 public:
  virtual ~TargetModel() = default;
  virtual std::size_t dimension() const = 0;
  /// Deterministic given (prompt, seed). Must tolerate concurrent calls.
  virtual Embedding generate(std::string_view prompt, std::uint64_t seed) const = 0;
};

class ConceptEmbedder {
 public:
  virtual ~ConceptEmbedder() = default;
  virtual Embedding embed_concept(std::string_view word) const = 0;
};

struct ClassifierVerdict {
  double score = 0.0;
  bool flagged = false;
};

class UnsafeClassifier {
 public:
  virtual ~UnsafeClassifier() = default;
  virtual ClassifierVerdict classify(const Embedding& e) const = 0;
};

inline Embedding generate(const TargetModel& target, std::string_view prompt,
                          std::uint64_t seed) {
  if (prompt.empty()) fail(ErrorCode::kInvalidArgument, "empty prompt");
  return target.generate(prompt, seed);
}

inline ClassifierVerdict classify_unsafe(const UnsafeClassifier& cls,
                                         const Embedding& e) {
  return cls.classify(e);
}

// ============================================================================
// Mock targets
// ============================================================================

/// Fixed prompt -> embedding table; unknown prompts are backend failures.
class LookupTarget final : public TargetModel {
 public:
  LookupTarget(std::size_t dim, std::map<std::string, Embedding> table)
      : dim_(dim), table_(std::move(table)) {}

  std::size_t dimension() const override { return dim_; }

  Embedding generate(std::string_view prompt, std::uint64_t) const override {
    auto it = table_.find(std::string(prompt));
    if (it == table_.end()) {
      fail(ErrorCode::kBackendFailure, "no fixture for prompt '" + std::string(prompt) + "'");
    }
    return it->second;
  }

 private:
  std::size_t dim_;
  std::map<std::string, Embedding> table_;
};

struct HashingMockConfig {
  std::size_t dimension = 64;
  std::uint64_t hash_seed = 0;
  /// Unsafe-axis gain contributed by each occurrence of a trigger word.
  std::map<std::string, double> triggers;
  /// Per-dimension Gaussian noise scale; 0 makes the seed irrelevant.
  double noise = 0.0;
};

class HashingMockTarget final : public TargetModel {
 public:
  static constexpr std::size_t kUnsafeAxis = 0;

  explicit HashingMockTarget(HashingMockConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.dimension < 2) fail(ErrorCode::kInvalidArgument, "dimension must be >= 2");
  }

  const HashingMockConfig& config() const { return cfg_; }
  std::size_t dimension() const override { return cfg_.dimension; }
  Embedding unsafe_axis() const { return unit_axis(cfg_.dimension, kUnsafeAxis); }

  /// Lowercased words with surrounding punctuation removed.
  static std::vector<std::string> words_of(std::string_view prompt) {
    std::vector<std::string> out;
    for (auto& w : split_spaces(prompt)) {
      std::string_view v = w;
      while (!v.empty() && std::ispunct(static_cast<unsigned char>(v.front()))) v.remove_prefix(1);
      while (!v.empty() && std::ispunct(static_cast<unsigned char>(v.back()))) v.remove_suffix(1);
      if (!v.empty()) out.push_back(to_lower(v));
    }
    return out;
  }

  double unsafe_gain(std::string_view prompt) const {
    double gain = 0.0;
    for (const auto& w : words_of(prompt)) {
      auto it = cfg_.triggers.find(w);
      if (it != cfg_.triggers.end()) gain += it->second;
    }
    return gain;
  }

  Embedding generate(std::string_view prompt, std::uint64_t seed) const override {
    const std::size_t d = cfg_.dimension;
    Embedding e(d, 0.0);
    const auto words = words_of(prompt);
    auto add_feature = [&](std::string_view feature) {
      const std::uint64_t h = mix64(fnv1a64(feature) ^ cfg_.hash_seed);
      const std::size_t slot = 1 + static_cast<std::size_t>(h % (d - 1));
      e[slot] += (h >> 63) ? -1.0 : 1.0;
    };
    for (std::size_t i = 0; i < words.size(); ++i) {
      add_feature(words[i]);
      if (i + 1 < words.size()) add_feature(words[i] + ' ' + words[i + 1]);
    }
    const double n = norm(e);
    if (n > 0.0) {
      for (double& x : e) x /= n;
    }
    e[kUnsafeAxis] += unsafe_gain(prompt);
    if (cfg_.noise > 0.0) {
      Rng rng(derive_seed(cfg_.hash_seed, fnv1a64(prompt), seed));
      for (double& x : e) x += cfg_.noise * rng.normal();
    }
    return e;
  }

 private:
  HashingMockConfig cfg_;
};

// ============================================================================
// Concept embeddings
// ============================================================================

class ConceptTable final : public ConceptEmbedder {
 public:
  ConceptTable() = default;
  explicit ConceptTable(std::map<std::string, Embedding> table) : table_(std::move(table)) {}

  void set(std::string word, Embedding e) { table_[std::move(word)] = std::move(e); }
  const std::map<std::string, Embedding>& entries() const { return table_; }

  Embedding embed_concept(std::string_view word) const override {
    auto it = table_.find(std::string(word));
    if (it == table_.end()) {
      fail(ErrorCode::kUnknownConcept, "no embedding for '" + std::string(word) + "'");
    }
    return it->second;
  }

  /// Lines of `<word>\t<v1> <v2> ...`; words may contain spaces, so the
  /// separator is a tab.
  static ConceptTable load(const std::filesystem::path& path) {
    ConceptTable t;
    for (const auto& line : read_lines(path)) {
      if (trim(line).empty() || line.front() == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        fail(ErrorCode::kParseFailure, "concept line lacks a tab: " + line);
      }
      std::istringstream vs(line.substr(tab + 1));
      Embedding e;
      double x;
      while (vs >> x) e.push_back(x);
      t.table_[line.substr(0, tab)] = std::move(e);
    }
    return t;
  }

  std::string serialize() const {
    std::string out;
    char buf[40];
    for (const auto& [word, e] : table_) {
      out += word;
      out += '\t';
      for (std::size_t i = 0; i < e.size(); ++i) {
        std::snprintf(buf, sizeof(buf), i ? " %.17g" : "%.17g", e[i]);
        out += buf;
      }
      out += '\n';
    }
    return out;
  }

 private:
  std::map<std::string, Embedding> table_;
};

inline Embedding embed_concept(const ConceptEmbedder& backend, std::string_view word) {
  return backend.embed_concept(word);
}

inline std::vector<Embedding> embed_concepts(const ConceptEmbedder& backend,
                                             const UnsafeWordList& words) {
  std::vector<Embedding> out;
  out.reserve(words.size());
  for (const auto& w : words.words) out.push_back(backend.embed_concept(w));
  return out;
}

// ============================================================================
// Alignment constraint
// ============================================================================

/// sim(G, I) + (1/|W|) * sum_w sim(G, e_w), with precomputed concept
/// embeddings.
inline double alignment_loss(const Embedding& generated, const Embedding& unsafe_image,
                             const std::vector<Embedding>& concept_embeddings) {
  if (concept_embeddings.empty()) fail(ErrorCode::kEmptyInput, "empty unsafe word list");
  double concept_sum = 0.0;
  for (const auto& c : concept_embeddings) concept_sum += similarity(generated, c);
  return similarity(generated, unsafe_image) +
         concept_sum / static_cast<double>(concept_embeddings.size());
}

inline double alignment_loss(const TargetModel& target, std::string_view prompt,
                             const Embedding& unsafe_image, const UnsafeWordList& words,
                             const ConceptEmbedder& concepts, std::uint64_t seed = 0) {
  if (words.empty()) fail(ErrorCode::kEmptyInput, "empty unsafe word list");
  return alignment_loss(generate(target, prompt, seed), unsafe_image,
                        embed_concepts(concepts, words));
}

// ============================================================================
// Unsafe image set
// ============================================================================

struct UnsafeImageSet {
  std::vector<Embedding> items;

  std::size_t size() const { return items.size(); }
  std::size_t dimension() const { return items.empty() ? 0 : items.front().size(); }

  /// First line: dimension d. Then one whitespace-separated vector per line.
  static UnsafeImageSet load(const std::filesystem::path& path) {
    auto lines = read_lines(path);
    std::size_t i = 0;
    while (i < lines.size() && (trim(lines[i]).empty() || lines[i].front() == '#')) ++i;
    if (i == lines.size()) fail(ErrorCode::kParseFailure, "missing dimension header");
    const std::size_t d = std::stoul(lines[i++]);
    UnsafeImageSet set;
    for (; i < lines.size(); ++i) {
      if (trim(lines[i]).empty() || lines[i].front() == '#') continue;
      std::istringstream vs(lines[i]);
      Embedding e;
      double x;
      while (vs >> x) e.push_back(x);
      if (e.size() != d) {
        fail(ErrorCode::kDimensionMismatch,
             "image vector has " + std::to_string(e.size()) + " entries, header says " +
                 std::to_string(d));
      }
      set.items.push_back(std::move(e));
    }
    if (set.items.empty()) fail(ErrorCode::kEmptyInput, "unsafe image set is empty");
    return set;
  }

  std::string serialize() const {
    std::string out = std::to_string(dimension()) + "\n";
    char buf[40];
    for (const auto& e : items) {
      for (std::size_t i = 0; i < e.size(); ++i) {
        std::snprintf(buf, sizeof(buf), i ? " %.17g" : "%.17g", e[i]);
        out += buf;
      }
      out += '\n';
    }
    return out;
  }
};

/// Uniform sample without replacement (partial Fisher-Yates).
inline std::vector<Embedding> sample_unsafe_images(const UnsafeImageSet& set,
                                                   std::size_t count, Rng& rng) {
  if (count < 1 || count > set.size()) {
    fail(ErrorCode::kCountExceedsSet, "requested " + std::to_string(count) + " of " +
                                          std::to_string(set.size()) + " images");
  }
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Embedding> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(set.size() - i));
    std::swap(order[i], order[j]);
    out.push_back(set.items[order[i]]);
  }
  return out;
}

/// Synthetic unsafe embeddings clustered around `axis`: axis + spread * noise.
inline std::vector<Embedding> synthetic_cluster(const Embedding& axis, std::size_t count,
                                                double spread, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Embedding> out;
  for (std::size_t i = 0; i < count; ++i) {
    Embedding e = axis;
    for (double& x : e) x += spread * rng.normal() / std::sqrt(double(axis.size()));
    out.push_back(std::move(e));
  }
  return out;
}

inline ConceptTable synthetic_concepts(const Embedding& axis, const UnsafeWordList& words,
                                       double spread, std::uint64_t seed) {
  ConceptTable t;
  for (const auto& w : words.words) {
    t.set(w, synthetic_cluster(axis, 1, spread, derive_seed(seed, fnv1a64(w))).front());
  }
  return t;
}

// ============================================================================
// Reference classifier
// ============================================================================

/// score = max(0, cos(e, axis)); flagged when score >= threshold.
class AxisClassifier final : public UnsafeClassifier {
 public:
  static constexpr double kDefaultThreshold = 0.45;

  explicit AxisClassifier(Embedding axis, double threshold = kDefaultThreshold)
      : axis_(std::move(axis)), threshold_(threshold) {}

  double threshold() const { return threshold_; }

  ClassifierVerdict classify(const Embedding& e) const override {
    ClassifierVerdict v;
    v.score = std::max(0.0, similarity(e, axis_));
    v.flagged = v.score >= threshold_;
    return v;
  }

 private:
  Embedding axis_;
  double threshold_;
};

}  // namespace advsuffix
