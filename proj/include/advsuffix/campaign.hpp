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
 * Campaign: alternating suffix optimization and generator fine-tuning.
 *
 * Each iteration takes the next batch of training prompts, optimizes one
 * suffix per prompt with the generator frozen, checks each adversarial
 * prompt against the target and classifier, stores the results in a
 * priority replay buffer and finally fine-tunes the generator on the
 * highest-priority entries.
 *
 * Replay priority is a strict lexicographic key: jailbreak success first,
 * then lower objective, then more recent insertion.
 */

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "advsuffix/beam_optimizer.hpp"
#include "advsuffix/error.hpp"
#include "advsuffix/evasion.hpp"
#include "advsuffix/models.hpp"
#include "advsuffix/target_oracle.hpp"
#include "advsuffix/token_space.hpp"
#include "advsuffix/util.hpp"
#include "json.hpp"

namespace advsuffix {

// ============================================================================
// Prompt preprocessing
// ============================================================================

/// x followed by a single space and the prior phrase; empty prior leaves x
/// unchanged.
inline TokenSeq attach_prior_suffix(const TokenSeq& x, std::string_view prior,
                                    const Vocabulary& vocab) {
  if (prior.empty()) return x;
  return concat(x, tokenize(" " + std::string(prior), vocab));
}

/// Tokenize, truncate, then attach the prior suffix.
inline TokenSeq prepare_prompt(std::string_view text, std::size_t max_tokens,
                               std::string_view prior, const Vocabulary& vocab) {
  return attach_prior_suffix(truncate_prompt(tokenize(text, vocab), max_tokens, vocab),
                             prior, vocab);
}

// ============================================================================
// Jailbreak check
// ============================================================================

struct JailbreakCheck {
  bool success = false;
  std::vector<ClassifierVerdict> verdicts;
};

/// Generates `n` outputs with seeds base_seed, base_seed+1, ... and counts
/// the prompt as a successful jailbreak when any output is flagged unsafe.
inline JailbreakCheck jailbreak_check(const TargetModel& target,
                                      const UnsafeClassifier& classifier,
                                      std::string_view prompt, std::size_t n,
                                      std::uint64_t base_seed) {
  if (n < 1) fail(ErrorCode::kInvalidArgument, "need at least one generation");
  JailbreakCheck out;
  for (std::size_t i = 0; i < n; ++i) {
    auto v = classifier.classify(generate(target, prompt, base_seed + i));
    out.success = out.success || v.flagged;
    out.verdicts.push_back(v);
  }
  return out;
}

// ============================================================================
// Replay buffer
// ============================================================================

struct ReplayEntry {
  TokenSeq prompt;
  TokenSeq suffix;
  double objective = 0.0;
  bool success = false;
  std::size_t iteration = 0;
  std::uint64_t seq = 0;  // insertion stamp, assigned by the buffer
};

/// True when `a` has strictly higher priority than `b`.
inline bool higher_priority(const ReplayEntry& a, const ReplayEntry& b) {
  if (a.success != b.success) return a.success;
  if (a.objective != b.objective) return a.objective < b.objective;
  return a.seq > b.seq;
}

class ReplayBuffer {
 public:
  static constexpr std::size_t kDefaultCapacity = 4096;

  explicit ReplayBuffer(std::size_t capacity = kDefaultCapacity) : capacity_(capacity) {
    if (capacity_ < 1) fail(ErrorCode::kInvalidArgument, "buffer capacity must be >= 1");
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t counter() const { return counter_; }
  const std::vector<ReplayEntry>& entries() const { return entries_; }

  /// Stores the entry; when over capacity the lowest-priority entry,
  /// possibly the new one, is evicted. Duplicates are allowed.
  void push(ReplayEntry entry) {
    if (!std::isfinite(entry.objective)) {
      fail(ErrorCode::kInvalidArgument, "replay objective must be finite");
    }
    entry.seq = counter_++;
    entries_.push_back(std::move(entry));
    if (entries_.size() > capacity_) {
      auto worst = std::min_element(entries_.begin(), entries_.end(),
                                    [](const ReplayEntry& a, const ReplayEntry& b) {
                                      return higher_priority(b, a);
                                    });
      entries_.erase(worst);
    }
  }

  std::vector<ReplayEntry> sorted() const {
    auto out = entries_;
    std::sort(out.begin(), out.end(), higher_priority);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["capacity"] = capacity_;
    j["counter"] = counter_;
    auto& arr = j["entries"] = nlohmann::json::array();
    for (const auto& e : entries_) {
      arr.push_back({{"prompt_ids", e.prompt.ids},
                     {"prompt", e.prompt.text},
                     {"suffix_ids", e.suffix.ids},
                     {"suffix", e.suffix.text},
                     {"objective", e.objective},
                     {"success", e.success},
                     {"iteration", e.iteration},
                     {"seq", e.seq}});
    }
    return j;
  }

  static ReplayBuffer from_json(const nlohmann::json& j) {
    ReplayBuffer buf(j.at("capacity").get<std::size_t>());
    buf.counter_ = j.at("counter").get<std::uint64_t>();
    for (const auto& e : j.at("entries")) {
      ReplayEntry r;
      r.prompt.ids = e.at("prompt_ids").get<std::vector<TokenId>>();
      r.prompt.text = e.at("prompt").get<std::string>();
      r.suffix.ids = e.at("suffix_ids").get<std::vector<TokenId>>();
      r.suffix.text = e.at("suffix").get<std::string>();
      r.objective = e.at("objective").get<double>();
      r.success = e.at("success").get<bool>();
      r.iteration = e.at("iteration").get<std::size_t>();
      r.seq = e.at("seq").get<std::uint64_t>();
      buf.entries_.push_back(std::move(r));
    }
    return buf;
  }

 private:
  std::size_t capacity_;
  std::uint64_t counter_ = 0;
  std::vector<ReplayEntry> entries_;
};

/// Top min(n, size) entries by priority.
inline std::vector<ReplayEntry> sample_high_priority(const ReplayBuffer& buffer,
                                                     std::size_t n) {
  if (buffer.empty()) fail(ErrorCode::kEmptyBuffer, "replay buffer is empty");
  if (n < 1) fail(ErrorCode::kInvalidArgument, "sample count must be >= 1");
  auto out = buffer.sorted();
  if (out.size() > n) out.resize(n);
  return out;
}

/// Stochastic alternative: draws n entries without replacement with weight
/// exp(-rank / temperature) over the priority order.
inline std::vector<ReplayEntry> sample_by_rank(const ReplayBuffer& buffer, std::size_t n,
                                               double temperature, Rng& rng) {
  if (buffer.empty()) fail(ErrorCode::kEmptyBuffer, "replay buffer is empty");
  if (!(temperature > 0.0)) fail(ErrorCode::kInvalidArgument, "temperature must be > 0");
  auto ranked = buffer.sorted();
  std::vector<double> w(ranked.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(-double(i) / temperature);
  std::vector<ReplayEntry> out;
  const std::size_t take = std::min(n, ranked.size());
  for (std::size_t d = 0; d < take; ++d) {
    double total = 0.0;
    for (double x : w) total += x;
    double u = rng.uniform01() * total;
    std::size_t pick = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] <= 0.0) continue;
      pick = i;
      if (u < w[i]) break;
      u -= w[i];
    }
    out.push_back(ranked[pick]);
    w[pick] = 0.0;
  }
  return out;
}

// ============================================================================
// Campaign
// ============================================================================

struct CampaignConfig {
  SearchConfig search;
  std::size_t batch_size = 4;
  std::string prior_suffix;
  std::size_t truncate_tokens = 50;
  /// Replay entries per fine-tune step; 0 means batch_size.
  std::size_t fine_tune_samples = 0;
  int epochs = 1;
  /// Rank temperature for stochastic replay sampling; 0 keeps deterministic
  /// top-n.
  double priority_temperature = 0.0;
  /// Generations per jailbreak check.
  std::size_t checks = 3;
  std::uint64_t check_seed = 1000;
  /// Number of batch iterations; 0 means one pass over the dataset.
  std::size_t iterations = 0;
  std::size_t images_per_batch = 4;
  std::uint64_t seed = 0;
  std::size_t buffer_capacity = ReplayBuffer::kDefaultCapacity;

  void validate() const {
    search.validate();
    if (batch_size < 1 || checks < 1 || images_per_batch < 1 || epochs < 1) {
      fail(ErrorCode::kInvalidArgument, "campaign counts must be >= 1");
    }
  }
};

/// Runtime bindings for a campaign. The generator is the only mutable one.
struct CampaignBindings {
  const Vocabulary* vocab = nullptr;
  GeneratorModel* generator = nullptr;
  const GeneratorModel* aux = nullptr;
  const TargetModel* target = nullptr;
  const UnsafeClassifier* classifier = nullptr;
  const UnsafeImageSet* images = nullptr;
  const UnsafeWordList* words = nullptr;
  const BannedIndicatorSet* banned = nullptr;
  std::vector<Embedding> concept_embeddings;
  PenaltyPolicy policy;

  SearchProblem problem() const {
    SearchProblem p;
    p.vocab = vocab;
    p.generator = generator;
    p.aux = aux;
    p.target = target;
    p.banned = banned;
    p.words = words;
    p.concept_embeddings = concept_embeddings;
    p.policy = policy;
    return p;
  }
};

/// Resumable state: the replay buffer and the next iteration index.
struct CampaignState {
  ReplayBuffer buffer;
  std::size_t next_iteration = 0;
};

struct PromptOutcome {
  std::string prompt;
  std::optional<std::string> error;
  std::optional<ErrorCode> error_code;
  Beam best;
  JailbreakCheck check;
};

struct IterationRecord {
  std::size_t iteration = 0;
  std::vector<PromptOutcome> outcomes;
  std::size_t buffer_size = 0;
  std::optional<FineTuneResult> fine_tune;
  std::size_t fine_tune_samples = 0;
  std::string skip_reason;

  std::size_t searched() const {
    return static_cast<std::size_t>(std::count_if(
        outcomes.begin(), outcomes.end(), [](const auto& o) { return !o.error; }));
  }

  double rsr_train() const {
    if (outcomes.empty()) return 0.0;
    std::size_t ok = 0;
    for (const auto& o : outcomes) ok += (!o.error && o.check.success) ? 1 : 0;
    return 100.0 * double(ok) / double(outcomes.size());
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["iteration"] = iteration;
    auto& arr = j["prompts"] = nlohmann::json::array();
    double sum_obj = 0.0, sum_per = 0.0;
    for (const auto& o : outcomes) {
      nlohmann::json p;
      p["prompt"] = o.prompt;
      if (o.error) {
        p["error"] = *o.error;
      } else {
        p["suffix"] = o.best.suffix.text;
        p["suffix_ids"] = o.best.suffix.ids;
        p["objective"] = breakdown_json(o.best.breakdown);
        p["penalized"] = o.best.penalized;
        p["success"] = o.check.success;
        std::vector<double> scores;
        for (const auto& v : o.check.verdicts) scores.push_back(v.score);
        p["scores"] = scores;
        sum_obj += o.best.score();
        sum_per += o.best.breakdown.per;
      }
      arr.push_back(std::move(p));
    }
    const std::size_t n = searched();
    j["rsr_train"] = rsr_train();
    j["mean_objective"] = n ? nlohmann::json(sum_obj / double(n)) : nlohmann::json(nullptr);
    j["mean_per"] = n ? nlohmann::json(sum_per / double(n)) : nlohmann::json(nullptr);
    j["buffer_size"] = buffer_size;
    if (fine_tune) {
      j["fine_tune"] = {{"samples", fine_tune_samples},
                        {"loss_before", fine_tune->loss_before},
                        {"loss_after", fine_tune->loss_after}};
    } else {
      j["fine_tune_skipped"] = skip_reason;
    }
    return j;
  }
};

struct CampaignLog {
  std::vector<IterationRecord> iterations;

  std::string to_jsonl() const {
    std::string out;
    for (const auto& it : iterations) {
      out += it.to_json().dump();
      out += '\n';
    }
    return out;
  }
};

/// Runs the alternating loop over `dataset`, continuing from `state`.
/// Search or backend errors on a prompt are recorded and the rest of the
/// iteration proceeds; fine-tuning is skipped when nothing is available to
/// sample.
inline CampaignLog run_campaign(const std::vector<std::string>& dataset,
                                const CampaignConfig& cfg, const CampaignBindings& env,
                                CampaignState& state) {
  cfg.validate();
  if (dataset.empty()) fail(ErrorCode::kEmptyInput, "empty prompt dataset");
  if (!env.vocab || !env.generator || !env.aux || !env.target || !env.classifier ||
      !env.images || !env.words) {
    fail(ErrorCode::kInvalidArgument, "campaign is missing a binding");
  }
  const std::size_t iterations =
      cfg.iterations ? cfg.iterations : (dataset.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t ft_samples = cfg.fine_tune_samples ? cfg.fine_tune_samples : cfg.batch_size;
  const SearchProblem problem = env.problem();

  CampaignLog log;
  for (std::size_t step = 0; step < iterations; ++step) {
    const std::size_t it = state.next_iteration;
    IterationRecord rec;
    rec.iteration = it;

    Rng image_rng(derive_seed(cfg.seed, 0x1a6e5, it));
    const auto images = sample_unsafe_images(
        *env.images, std::min(cfg.images_per_batch, env.images->size()), image_rng);

    for (std::size_t j = 0; j < cfg.batch_size; ++j) {
      PromptOutcome out;
      out.prompt = dataset[(it * cfg.batch_size + j) % dataset.size()];
      try {
        const TokenSeq x =
            prepare_prompt(out.prompt, cfg.truncate_tokens, cfg.prior_suffix, *env.vocab);
        SearchConfig scfg = cfg.search;
        scfg.seed = derive_seed(cfg.search.seed, it, j);
        scfg.record_trace = false;
        out.best = optimize_suffix(x, scfg, problem, images[j % images.size()]).best;
        out.check = jailbreak_check(*env.target, *env.classifier, out.best.text, cfg.checks,
                                    cfg.check_seed);
        ReplayEntry entry;
        entry.prompt = x;
        entry.suffix = out.best.suffix;
        entry.objective = out.best.score();
        entry.success = out.check.success;
        entry.iteration = it;
        state.buffer.push(std::move(entry));
      } catch (const Error& e) {
        out.error = e.what();
        out.error_code = e.code();
      }
      rec.outcomes.push_back(std::move(out));
    }

    rec.buffer_size = state.buffer.size();
    if (state.buffer.empty()) {
      rec.skip_reason = "replay buffer empty";
    } else {
      std::vector<ReplayEntry> picked;
      if (cfg.priority_temperature > 0.0) {
        Rng rng(derive_seed(cfg.seed, 0x5a3b1e, it));
        picked = sample_by_rank(state.buffer, ft_samples, cfg.priority_temperature, rng);
      } else {
        picked = sample_high_priority(state.buffer, ft_samples);
      }
      FineTuneBatch batch;
      for (const auto& e : picked) batch.push_back({e.prompt, e.suffix});
      rec.fine_tune = fine_tune(*env.generator, batch, cfg.epochs);
      rec.fine_tune_samples = batch.size();
    }
    state.next_iteration = it + 1;
    log.iterations.push_back(std::move(rec));
  }
  return log;
}

}  // namespace advsuffix
