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
 * Filter evasion
 *
 * Two penalties steer the search away from blacklisted vocabulary:
 *  - primary: banned token ids are masked (or down-weighted) in every
 *    next-token distribution before candidates are sampled;
 *  - secondary: a candidate whose trailing word contains a listed word is
 *    pushed out of the top-b by an additive score penalty. This catches
 *    words assembled from several individually harmless tokens.
 *
 * The filters below are what a deployment would put in front of the target;
 * evaluation runs generated prompts through them.
 */

#include <cstdio>
#include <memory>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "advsuffix/beam.hpp"
#include "advsuffix/error.hpp"
#include "advsuffix/models.hpp"
#include "advsuffix/token_space.hpp"

namespace advsuffix {

// ============================================================================
// Penalty policy
// ============================================================================

struct PenaltyPolicy {
  enum class Primary { kNone, kHardMask, kMultiplicative };

  static constexpr double kDisqualify = 1e6;

  Primary primary = Primary::kHardMask;
  double factor = 0.1;  // multiplicative mode only; must lie in (0, 1)
  bool secondary_enabled = true;
  double secondary_penalty = kDisqualify;

  static PenaltyPolicy none() {
    PenaltyPolicy p;
    p.primary = Primary::kNone;
    p.secondary_enabled = false;
    return p;
  }

  void validate() const {
    if (primary == Primary::kMultiplicative && !(factor > 0.0 && factor < 1.0)) {
      fail(ErrorCode::kInvalidArgument, "multiplicative factor must lie in (0, 1)");
    }
    if (secondary_enabled && !(secondary_penalty >= 0.0)) {
      fail(ErrorCode::kInvalidArgument, "secondary penalty must be >= 0");
    }
  }
};

inline std::string_view primary_mode_name(PenaltyPolicy::Primary p) {
  switch (p) {
    case PenaltyPolicy::Primary::kNone: return "none";
    case PenaltyPolicy::Primary::kHardMask: return "hard-mask";
    case PenaltyPolicy::Primary::kMultiplicative: return "multiplicative";
  }
  return "?";
}

/// Banned entries are zeroed (hard mask) or scaled by `factor`, and the
/// result is renormalized. Relative order among unbanned tokens is preserved.
inline NextTokenDistribution apply_primary_penalty(NextTokenDistribution dist,
                                                   const BannedIndicatorSet& banned,
                                                   const PenaltyPolicy& policy) {
  if (policy.primary == PenaltyPolicy::Primary::kNone || banned.empty()) return dist;
  const double scale =
      policy.primary == PenaltyPolicy::Primary::kHardMask ? 0.0 : policy.factor;
  for (TokenId id : banned.indices) {
    const auto i = static_cast<std::size_t>(id);
    if (i < dist.size()) dist.probs[i] *= scale;
  }
  const double mass = dist.sum();
  if (!(mass > 0.0)) fail(ErrorCode::kAllMassBanned, "penalty removed all probability mass");
  for (double& p : dist.probs) p /= mass;
  return dist;
}

/// The list word contained in the trailing words of `text`, or empty when
/// clean. A single-word entry is checked against the last complete word; an
/// entry spanning m words is checked against the last m words.
inline std::string secondary_hit(std::string_view text, const UnsafeWordList& words) {
  if (trim(text).empty()) return {};
  const std::string last = last_complete_word(text);
  for (const auto& w : words.words) {
    const std::size_t parts = split_spaces(w).size();
    if (parts <= 1) {
      if (last.find(w) != std::string::npos) return w;
    } else if (last_words(text, parts).find(w) != std::string::npos) {
      return w;
    }
  }
  return {};
}

/// Adds the secondary penalty to every beam whose trailing word contains a
/// listed word. Already-penalized beams are left as they are, so the penalty
/// never stacks.
inline std::vector<Beam> apply_secondary_penalty(std::vector<Beam> beams,
                                                 const UnsafeWordList& words,
                                                 const PenaltyPolicy& policy) {
  if (!policy.secondary_enabled) return beams;
  for (auto& beam : beams) {
    if (beam.penalized) continue;
    if (secondary_hit(beam.text, words).empty()) continue;
    beam.penalized = true;
    beam.breakdown.penalty += policy.secondary_penalty;
    beam.breakdown.composed = beam.breakdown.recompute();
  }
  return beams;
}

// ============================================================================
// Filters
// ============================================================================

struct FilterVerdict {
  enum class Reason { kClean, kBlacklistHit, kPerplexityExceeded };

  bool blocked = false;
  Reason reason = Reason::kClean;
  std::string word;
  double value = 0.0;
  double limit = 0.0;

  static FilterVerdict clean() { return {}; }

  static FilterVerdict blacklist_hit(std::string w) {
    FilterVerdict v;
    v.blocked = true;
    v.reason = Reason::kBlacklistHit;
    v.word = std::move(w);
    return v;
  }

  static FilterVerdict perplexity_exceeded(double value, double limit) {
    FilterVerdict v;
    v.blocked = true;
    v.reason = Reason::kPerplexityExceeded;
    v.value = value;
    v.limit = limit;
    return v;
  }

  std::string reason_string() const {
    switch (reason) {
      case Reason::kClean: return "clean";
      case Reason::kBlacklistHit: return "blacklist-hit(" + word + ")";
      case Reason::kPerplexityExceeded: {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "perplexity-exceeded(%.6g, %.6g)", value, limit);
        return buf;
      }
    }
    return "clean";
  }
};

enum class MatchMode { kSubstring, kWordBoundary };

/// Blocks when any list word occurs in the lowercased prompt. Word-boundary
/// mode additionally requires the occurrence to start and end at a space or
/// at the text edge. The reported word is the longest one that matched.
inline FilterVerdict blacklist_filter(std::string_view prompt, const UnsafeWordList& words,
                                      MatchMode mode = MatchMode::kSubstring) {
  const std::string text = to_lower(prompt);
  const std::string* best = nullptr;
  for (const auto& w : words.words) {
    if (best && w.size() <= best->size()) continue;
    for (std::size_t pos = text.find(w); pos != std::string::npos;
         pos = text.find(w, pos + 1)) {
      if (mode == MatchMode::kWordBoundary) {
        const std::size_t end = pos + w.size();
        const bool left = pos == 0 || text[pos - 1] == ' ';
        const bool right = end == text.size() || text[end] == ' ';
        if (!left || !right) continue;
      }
      best = &w;
      break;
    }
  }
  return best ? FilterVerdict::blacklist_hit(*best) : FilterVerdict::clean();
}

/// Blocks when prompt perplexity under `aux` strictly exceeds `limit`.
inline FilterVerdict perplexity_filter(const TokenSeq& prompt, const GeneratorModel& aux,
                                       double limit) {
  if (!(limit > 1.0)) fail(ErrorCode::kInvalidArgument, "perplexity limit must be > 1");
  const double ppl = prompt_perplexity(aux, prompt);
  return ppl > limit ? FilterVerdict::perplexity_exceeded(ppl, limit)
                     : FilterVerdict::clean();
}

// ============================================================================
// Filter stack
// ============================================================================

struct BlacklistFilterSpec {
  UnsafeWordList words;
  MatchMode mode = MatchMode::kSubstring;
};

struct PerplexityFilterSpec {
  const GeneratorModel* aux = nullptr;
  double limit = 0.0;
};

using FilterSpec = std::variant<BlacklistFilterSpec, PerplexityFilterSpec>;

/// Ordered prompt filters. Every filter is evaluated so reports can show all
/// reasons; a prompt is blocked when any verdict blocks.
class FilterStack {
 public:
  FilterStack() = default;
  FilterStack(const Vocabulary* vocab, std::vector<FilterSpec> filters)
      : vocab_(vocab), filters_(std::move(filters)) {}

  bool empty() const { return filters_.empty(); }
  std::size_t size() const { return filters_.size(); }
  void add(FilterSpec f) { filters_.push_back(std::move(f)); }

  std::vector<FilterVerdict> evaluate(std::string_view prompt) const {
    std::vector<FilterVerdict> out;
    out.reserve(filters_.size());
    for (const auto& f : filters_) {
      if (const auto* b = std::get_if<BlacklistFilterSpec>(&f)) {
        out.push_back(blacklist_filter(prompt, b->words, b->mode));
      } else {
        const auto& p = std::get<PerplexityFilterSpec>(f);
        if (!vocab_ || !p.aux) fail(ErrorCode::kInvalidArgument, "perplexity filter lacks a model");
        out.push_back(perplexity_filter(tokenize(prompt, *vocab_), *p.aux, p.limit));
      }
    }
    return out;
  }

  bool blocks(std::string_view prompt) const {
    for (const auto& v : evaluate(prompt)) {
      if (v.blocked) return true;
    }
    return false;
  }

 private:
  const Vocabulary* vocab_ = nullptr;
  std::vector<FilterSpec> filters_;
};

inline bool any_blocked(const std::vector<FilterVerdict>& verdicts) {
  for (const auto& v : verdicts) {
    if (v.blocked) return true;
  }
  return false;
}

}  // namespace advsuffix
