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
 * Token-wise stochastic beam search over adversarial suffixes.
 *
 * Each step expands every kept beam by k tokens sampled without replacement
 * from the (penalized) generator distribution at [x, S_{t-1}], scores all
 * k*b children with the jailbreak objective
 *
 *     L = -align([x, S]) + lambda * per(S | x)
 *
 * and keeps the b children with the lowest score. The target is queried
 * with the full rendered prompt every time; alignment values are memoized
 * on exact prompt text. The perplexity term is accumulated incrementally,
 * one conditional log-probability per appended token.
 *
 * Sampling happens sequentially in kept-beam order from a single seeded
 * stream, so the result is deterministic regardless of how many threads
 * evaluate the target.
 */

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "advsuffix/beam.hpp"
#include "advsuffix/error.hpp"
#include "advsuffix/evasion.hpp"
#include "advsuffix/models.hpp"
#include "advsuffix/target_oracle.hpp"
#include "advsuffix/token_space.hpp"
#include "advsuffix/util.hpp"
#include "json.hpp"

namespace advsuffix {

enum class SamplingMethod { kMultinomial, kGumbelTopK };

struct SearchConfig {
  std::size_t T = 15;
  std::size_t k = 12;
  std::size_t b = 4;
  double lambda = 0.1;
  SamplingMethod sampling = SamplingMethod::kMultinomial;
  std::uint64_t seed = 0;
  /// Seed passed to the target during scoring.
  std::uint64_t target_seed = 0;
  std::size_t jobs = 1;
  bool record_trace = true;

  void validate() const {
    if (T < 1) fail(ErrorCode::kInvalidArgument, "T must be >= 1");
    if (k < 1) fail(ErrorCode::kInvalidArgument, "k must be >= 1");
    if (b < 1) fail(ErrorCode::kInvalidArgument, "b must be >= 1");
    if (!(lambda >= 0.0)) fail(ErrorCode::kInvalidArgument, "lambda must be >= 0");
  }
};

/// Everything the search reads but never mutates.
struct SearchProblem {
  const Vocabulary* vocab = nullptr;
  const GeneratorModel* generator = nullptr;
  const GeneratorModel* aux = nullptr;
  const TargetModel* target = nullptr;
  const BannedIndicatorSet* banned = nullptr;  // null disables the primary penalty
  const UnsafeWordList* words = nullptr;
  std::vector<Embedding> concept_embeddings;
  PenaltyPolicy policy;

  void validate() const {
    if (!vocab || !generator || !aux || !target || !words) {
      fail(ErrorCode::kInvalidArgument, "search problem is missing a binding");
    }
    if (concept_embeddings.empty()) {
      fail(ErrorCode::kEmptyInput, "no concept embeddings");
    }
    policy.validate();
  }
};

// ============================================================================
// Objective
// ============================================================================

inline ObjectiveBreakdown jailbreak_objective(const TokenSeq& prompt, const TokenSeq& suffix,
                                              const SearchProblem& problem,
                                              const Embedding& unsafe_image, double lambda,
                                              std::uint64_t target_seed = 0) {
  const std::string text = prompt.text + suffix.text;
  const double align = alignment_loss(generate(*problem.target, text, target_seed),
                                      unsafe_image, problem.concept_embeddings);
  const double per = perplexity_loss(*problem.aux, prompt, suffix);
  return ObjectiveBreakdown::compose(align, per, lambda);
}

// ============================================================================
// Candidate sampling
// ============================================================================

/// k distinct ids drawn without replacement, proportional to probability.
/// Returns the whole support (in draw order) when it has fewer than k ids.
inline std::vector<TokenId> sample_candidates(const NextTokenDistribution& dist,
                                              std::size_t k, Rng& rng,
                                              SamplingMethod method = SamplingMethod::kMultinomial) {
  if (k < 1) fail(ErrorCode::kInvalidArgument, "k must be >= 1");
  std::vector<TokenId> support;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist.probs[i] > 0.0) support.push_back(static_cast<TokenId>(i));
  }
  if (support.empty()) fail(ErrorCode::kEmptySupport, "distribution has no support");
  const std::size_t take = std::min(k, support.size());
  std::vector<TokenId> out;
  out.reserve(take);

  if (method == SamplingMethod::kGumbelTopK) {
    std::vector<std::pair<double, TokenId>> keyed;
    keyed.reserve(support.size());
    for (TokenId id : support) {
      keyed.emplace_back(std::log(dist.probs[static_cast<std::size_t>(id)]) + rng.gumbel(), id);
    }
    std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(take),
                      keyed.end(), [](const auto& a, const auto& b) {
                        return a.first != b.first ? a.first > b.first : a.second < b.second;
                      });
    for (std::size_t i = 0; i < take; ++i) out.push_back(keyed[i].second);
    return out;
  }

  // Sequential draws; each draw renormalizes over the ids not yet taken.
  std::vector<double> mass;
  mass.reserve(support.size());
  for (TokenId id : support) mass.push_back(dist.probs[static_cast<std::size_t>(id)]);
  for (std::size_t draw = 0; draw < take; ++draw) {
    double remaining = 0.0;
    for (double m : mass) remaining += m;
    double u = rng.uniform01() * remaining;
    std::size_t pick = support.size();
    for (std::size_t i = 0; i < mass.size(); ++i) {
      if (mass[i] <= 0.0) continue;
      pick = i;
      if (u < mass[i]) break;
      u -= mass[i];
    }
    out.push_back(support[pick]);
    mass[pick] = 0.0;
  }
  return out;
}

// ============================================================================
// Selection
// ============================================================================

/// Strict weak order used everywhere beams are ranked: lower score first,
/// then the lexicographically smaller suffix id sequence.
inline bool beam_before(const Beam& a, const Beam& b) {
  if (a.score() != b.score()) return a.score() < b.score();
  return a.suffix.ids < b.suffix.ids;
}

/// The b best candidates, sorted best first. Keeps all when fewer than b.
inline std::vector<Beam> select_top_b(std::vector<Beam> candidates, std::size_t b) {
  if (b < 1) fail(ErrorCode::kInvalidArgument, "b must be >= 1");
  std::sort(candidates.begin(), candidates.end(), beam_before);
  if (candidates.size() > b) candidates.resize(b);
  return candidates;
}

// ============================================================================
// Search
// ============================================================================

struct CandidateRecord {
  std::vector<TokenId> ids;
  std::string suffix_text;
  ObjectiveBreakdown breakdown;
  bool penalized = false;
  bool kept = false;
};

struct StepTrace {
  std::size_t step = 0;
  std::vector<CandidateRecord> candidates;
  std::size_t expanded_beams = 0;
};

struct SearchResult {
  Beam best;
  std::vector<Beam> final_beams;
  std::vector<StepTrace> trace;
};

inline nlohmann::json breakdown_json(const ObjectiveBreakdown& b) {
  return {{"align", b.align}, {"per", b.per}, {"lambda", b.lambda},
          {"penalty", b.penalty}, {"composed", b.composed}};
}

/// One JSON object per step, newline-terminated.
inline std::string trace_to_jsonl(const std::vector<StepTrace>& trace) {
  std::string out;
  for (const auto& step : trace) {
    nlohmann::json rec;
    rec["step"] = step.step;
    rec["expanded_beams"] = step.expanded_beams;
    auto& cands = rec["candidates"] = nlohmann::json::array();
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < step.candidates.size(); ++i) {
      const auto& c = step.candidates[i];
      nlohmann::json j = breakdown_json(c.breakdown);
      j["ids"] = c.ids;
      j["suffix"] = c.suffix_text;
      j["penalized"] = c.penalized;
      cands.push_back(std::move(j));
      if (c.kept) kept.push_back(i);
    }
    rec["kept"] = kept;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

namespace detail {

/// Memoized alignment scores keyed on exact prompt text.
class AlignmentCache {
 public:
  AlignmentCache(const SearchProblem& problem, const Embedding& image, std::uint64_t seed)
      : problem_(problem), image_(image), seed_(seed) {}

  /// Fills `out[i]` for every text; misses are evaluated on up to `jobs`
  /// threads.
  void lookup(const std::vector<std::string>& texts, std::size_t jobs,
              std::vector<double>& out) {
    out.assign(texts.size(), 0.0);
    std::vector<std::string> misses;
    std::unordered_map<std::string, std::size_t> miss_index;
    for (const auto& t : texts) {
      if (!cache_.count(t) && !miss_index.count(t)) {
        miss_index.emplace(t, misses.size());
        misses.push_back(t);
      }
    }
    std::vector<double> scores(misses.size());
    parallel_for(misses.size(), jobs, [&](std::size_t i) {
      scores[i] = alignment_loss(generate(*problem_.target, misses[i], seed_), image_,
                                 problem_.concept_embeddings);
    });
    for (std::size_t i = 0; i < misses.size(); ++i) cache_.emplace(misses[i], scores[i]);
    for (std::size_t i = 0; i < texts.size(); ++i) out[i] = cache_.at(texts[i]);
  }

 private:
  const SearchProblem& problem_;
  const Embedding& image_;
  std::uint64_t seed_;
  std::unordered_map<std::string, double> cache_;
};

}  // namespace detail

/// Optimizes one adversarial suffix for prompt `x` (already truncated and
/// carrying any prior suffix) against a fixed unsafe image.
inline SearchResult optimize_suffix(const TokenSeq& x, const SearchConfig& cfg,
                                    const SearchProblem& problem,
                                    const Embedding& unsafe_image) {
  cfg.validate();
  problem.validate();
  if (x.empty()) fail(ErrorCode::kInvalidArgument, "empty prompt");

  const Vocabulary& vocab = *problem.vocab;
  const PenaltyPolicy& policy = problem.policy;
  const bool mask_active =
      problem.banned && policy.primary != PenaltyPolicy::Primary::kNone;
  const double sticky_penalty = policy.secondary_enabled ? policy.secondary_penalty : 0.0;

  Rng rng(cfg.seed);
  detail::AlignmentCache cache(problem, unsafe_image, cfg.target_seed);
  SearchResult result;

  Beam root;
  root.text = x.text;
  std::vector<Beam> beams{root};

  for (std::size_t t = 1; t <= cfg.T; ++t) {
    std::vector<Beam> children;
    std::vector<Beam> carried;  // beams whose expansion was fully masked
    std::size_t expanded = 0;

    for (const Beam& beam : beams) {
      std::vector<TokenId> ctx = x.ids;
      ctx.insert(ctx.end(), beam.suffix.ids.begin(), beam.suffix.ids.end());
      NextTokenDistribution dist = problem.generator->next_token(ctx);
      if (mask_active) {
        try {
          dist = apply_primary_penalty(std::move(dist), *problem.banned, policy);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kAllMassBanned) throw;
          if (t > 1) carried.push_back(beam);
          continue;
        }
      }
      ++expanded;
      // One aux query per beam; children read their conditional from it.
      const NextTokenDistribution aux_dist = problem.aux->next_token(ctx);
      for (TokenId id : sample_candidates(dist, cfg.k, rng, cfg.sampling)) {
        Beam child;
        child.suffix.ids = beam.suffix.ids;
        child.suffix.ids.push_back(id);
        const std::string& piece = vocab.text(id);
        child.suffix.text = beam.suffix.text + piece;
        child.text = beam.text + piece;
        const double p = aux_dist.probs.at(static_cast<std::size_t>(id));
        child.breakdown.per = beam.breakdown.per -
                              (p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity());
        // A prohibited word stays in the text once formed, so descendants
        // inherit the penalty.
        child.penalized = beam.penalized;
        children.push_back(std::move(child));
      }
    }
    if (expanded == 0) {
      fail(ErrorCode::kSearchDegenerate,
           "no beam could expand at step " + std::to_string(t));
    }

    std::vector<std::string> texts;
    texts.reserve(children.size());
    for (const auto& c : children) texts.push_back(c.text);
    std::vector<double> aligns;
    cache.lookup(texts, cfg.jobs, aligns);
    for (std::size_t i = 0; i < children.size(); ++i) {
      auto& c = children[i];
      c.breakdown = ObjectiveBreakdown::compose(aligns[i], c.breakdown.per, cfg.lambda,
                                                c.penalized ? sticky_penalty : 0.0);
    }
    children = apply_secondary_penalty(std::move(children), *problem.words, policy);
    children.insert(children.end(), carried.begin(), carried.end());

    std::vector<Beam> kept = select_top_b(children, cfg.b);

    if (cfg.record_trace) {
      StepTrace step;
      step.step = t;
      step.expanded_beams = expanded;
      step.candidates.reserve(children.size());
      for (const auto& c : children) {
        CandidateRecord rec;
        rec.ids = c.suffix.ids;
        rec.suffix_text = c.suffix.text;
        rec.breakdown = c.breakdown;
        rec.penalized = c.penalized;
        rec.kept = std::any_of(kept.begin(), kept.end(), [&](const Beam& k) {
          return k.suffix.ids == c.suffix.ids;
        });
        step.candidates.push_back(std::move(rec));
      }
      result.trace.push_back(std::move(step));
    }
    beams = std::move(kept);
  }

  // Penalties are already folded into the scores, so the final choice is the
  // front of the sorted set.
  result.best = beams.front();
  result.final_beams = std::move(beams);
  return result;
}

}  // namespace advsuffix
