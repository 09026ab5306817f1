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
 * Language models
 *
 * GeneratorModel is the next-token interface shared by the suffix generator,
 * the frozen auxiliary scorer and remote adapters. CountNGramModel is the
 * in-process reference: a Laplace-smoothed n-gram whose fine-tuning update
 * is an exact count increment, so the cross-entropy guarantees of the
 * training loop are provable rather than empirical.
 *
 * Thread safety: read paths (next_token, probability, perplexity, decode)
 * are const and safe to call concurrently. fine_tune mutates the model and
 * must not overlap with reads of the same instance.
 */

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "advsuffix/error.hpp"
#include "advsuffix/token_space.hpp"
#include "advsuffix/util.hpp"

namespace advsuffix {

// ============================================================================
// NextTokenDistribution
// ============================================================================

struct NextTokenDistribution {
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }

  double sum() const {
    return std::accumulate(probs.begin(), probs.end(), 0.0);
  }

  /// Non-negative, finite and summing to one within `tol`.
  bool valid(double tol = 1e-9) const {
    if (probs.empty()) return false;
    for (double p : probs) {
      if (!(p >= 0.0) || !std::isfinite(p)) return false;
    }
    return std::abs(sum() - 1.0) <= tol;
  }

  std::size_t support_size() const {
    return static_cast<std::size_t>(
        std::count_if(probs.begin(), probs.end(), [](double p) { return p > 0.0; }));
  }
};

// ============================================================================
// GeneratorModel
// ============================================================================

/// A (prompt, suffix) supervision pair for fine-tuning.
struct FineTunePair {
  TokenSeq prompt;
  TokenSeq suffix;
};

using FineTuneBatch = std::vector<FineTunePair>;

class GeneratorModel {
 public:
  virtual ~GeneratorModel() = default;

  virtual std::size_t vocab_size() const = 0;

  virtual NextTokenDistribution next_token(
      std::span<const TokenId> context) const = 0;

  /// p(token | context). Overridden where a single entry is cheaper than the
  /// full distribution.
  virtual double probability(std::span<const TokenId> context,
                             TokenId token) const {
    return next_token(context).probs.at(static_cast<std::size_t>(token));
  }

  virtual bool trainable() const { return false; }

  /// One supervised update on the batch. Models that cannot learn throw.
  virtual void apply_update(const FineTuneBatch& /*batch*/) {
    fail(ErrorCode::kNotTrainable, "model is read-only");
  }

  /// Independent copy of the current state (used to freeze the auxiliary
  /// scorer at the generator's initial weights).
  virtual std::unique_ptr<GeneratorModel> clone() const = 0;
};

inline NextTokenDistribution next_token_distribution(
    const GeneratorModel& model, const TokenSeq& context) {
  return model.next_token(context.ids);
}

// ============================================================================
// CountNGramModel
// ============================================================================

/// Laplace-smoothed n-gram over a fixed vocabulary:
///   p(token | ctx) = (count(ctx, token) + alpha) / (total(ctx) + alpha * |V|)
/// where ctx is the last n-1 tokens, left-padded with a begin-of-sequence
/// marker.
class CountNGramModel final : public GeneratorModel {
 public:
  static constexpr TokenId kBos = -1;

  struct Row {
    std::vector<std::uint32_t> counts;
    std::uint64_t total = 0;
  };

  CountNGramModel(std::size_t vocab_size, int order = 2, double alpha = 1.0,
                  std::uint64_t vocab_hash = 0)
      : vocab_size_(vocab_size), order_(order), alpha_(alpha),
        vocab_hash_(vocab_hash) {
    if (vocab_size == 0) fail(ErrorCode::kInvalidArgument, "empty vocabulary");
    if (order < 1) fail(ErrorCode::kInvalidArgument, "order must be >= 1");
    if (!(alpha > 0.0)) fail(ErrorCode::kInvalidArgument, "alpha must be > 0");
  }

  int order() const { return order_; }
  double alpha() const { return alpha_; }
  std::uint64_t vocab_hash() const { return vocab_hash_; }
  std::size_t vocab_size() const override { return vocab_size_; }
  bool trainable() const override { return true; }
  const std::map<std::vector<TokenId>, Row>& rows() const { return rows_; }

  std::vector<TokenId> context_key(std::span<const TokenId> context) const {
    const std::size_t width = static_cast<std::size_t>(order_ - 1);
    std::vector<TokenId> key(width, kBos);
    const std::size_t take = std::min(width, context.size());
    std::copy(context.end() - static_cast<std::ptrdiff_t>(take), context.end(),
              key.end() - static_cast<std::ptrdiff_t>(take));
    return key;
  }

  NextTokenDistribution next_token(
      std::span<const TokenId> context) const override {
    NextTokenDistribution dist;
    const double v = static_cast<double>(vocab_size_);
    auto it = rows_.find(context_key(context));
    if (it == rows_.end()) {
      dist.probs.assign(vocab_size_, 1.0 / v);
      return dist;
    }
    const Row& row = it->second;
    const double denom = static_cast<double>(row.total) + alpha_ * v;
    dist.probs.resize(vocab_size_);
    for (std::size_t i = 0; i < vocab_size_; ++i) {
      dist.probs[i] = (static_cast<double>(row.counts[i]) + alpha_) / denom;
    }
    return dist;
  }

  double probability(std::span<const TokenId> context,
                     TokenId token) const override {
    check_token(token);
    const double v = static_cast<double>(vocab_size_);
    auto it = rows_.find(context_key(context));
    if (it == rows_.end()) return 1.0 / v;
    const Row& row = it->second;
    return (static_cast<double>(row.counts[static_cast<std::size_t>(token)]) + alpha_) /
           (static_cast<double>(row.total) + alpha_ * v);
  }

  void add_count(std::span<const TokenId> context, TokenId token,
                 std::uint32_t n = 1) {
    check_token(token);
    Row& row = rows_[context_key(context)];
    if (row.counts.empty()) row.counts.assign(vocab_size_, 0);
    row.counts[static_cast<std::size_t>(token)] += n;
    row.total += n;
  }

  /// Counts every position of a training sequence, first token conditioned
  /// on the empty context.
  void observe(std::span<const TokenId> seq) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      add_count(seq.first(i), seq[i]);
    }
  }

  /// Adds one count per (context, target) along every pair's suffix.
  void apply_update(const FineTuneBatch& batch) override {
    for (const auto& pair : batch) {
      std::vector<TokenId> ctx = pair.prompt.ids;
      for (TokenId s : pair.suffix.ids) {
        add_count(ctx, s);
        ctx.push_back(s);
      }
    }
  }

  std::unique_ptr<GeneratorModel> clone() const override {
    return std::make_unique<CountNGramModel>(*this);
  }

  // --------------------------------------------------------------------------
  // Persistence
  // --------------------------------------------------------------------------
  //
  //   advsuffix-ngram 1
  //   order <n>
  //   alpha <a>
  //   vocab_size <V>
  //   vocab_hash <16 hex digits>
  //   rows <R>
  //   <ctx ids...> | <tok>:<count> ...
  //
  // BOS appears as -1 in context ids. Rows are written in key order.

  std::string serialize() const {
    std::ostringstream out;
    char alpha_buf[40];
    std::snprintf(alpha_buf, sizeof(alpha_buf), "%.17g", alpha_);
    out << "advsuffix-ngram 1\n"
        << "order " << order_ << '\n'
        << "alpha " << alpha_buf << '\n'
        << "vocab_size " << vocab_size_ << '\n'
        << "vocab_hash " << hex64(vocab_hash_) << '\n'
        << "rows " << rows_.size() << '\n';
    for (const auto& [key, row] : rows_) {
      for (std::size_t i = 0; i < key.size(); ++i) {
        if (i) out << ' ';
        out << key[i];
      }
      out << " |";
      for (std::size_t t = 0; t < row.counts.size(); ++t) {
        if (row.counts[t]) out << ' ' << t << ':' << row.counts[t];
      }
      out << '\n';
    }
    return out.str();
  }

  static CountNGramModel deserialize(const std::string& text,
                                     std::uint64_t expected_vocab_hash) {
    std::istringstream in(text);
    std::string magic, key;
    int version = 0;
    in >> magic >> version;
    if (magic != "advsuffix-ngram" || version != 1) {
      fail(ErrorCode::kParseFailure, "not an advsuffix-ngram v1 checkpoint");
    }
    int order = 0;
    double alpha = 0;
    std::size_t vsize = 0, nrows = 0;
    std::string hash_hex;
    in >> key >> order;
    expect_key(key, "order");
    in >> key >> alpha;
    expect_key(key, "alpha");
    in >> key >> vsize;
    expect_key(key, "vocab_size");
    in >> key >> hash_hex;
    expect_key(key, "vocab_hash");
    in >> key >> nrows;
    expect_key(key, "rows");
    if (!in) fail(ErrorCode::kParseFailure, "truncated checkpoint header");
    const std::uint64_t hash = std::stoull(hash_hex, nullptr, 16);
    if (hash != expected_vocab_hash) {
      fail(ErrorCode::kVocabMismatch, "checkpoint vocab hash " + hash_hex +
                                          " != " + hex64(expected_vocab_hash));
    }
    CountNGramModel model(vsize, order, alpha, hash);
    std::string line;
    std::getline(in, line);
    for (std::size_t r = 0; r < nrows; ++r) {
      if (!std::getline(in, line)) {
        fail(ErrorCode::kParseFailure, "truncated checkpoint rows");
      }
      const auto bar = line.find('|');
      if (bar == std::string::npos) fail(ErrorCode::kParseFailure, "bad row: " + line);
      std::istringstream ks(line.substr(0, bar));
      std::vector<TokenId> ctx;
      TokenId id;
      while (ks >> id) ctx.push_back(id);
      if (ctx.size() != static_cast<std::size_t>(order - 1)) {
        fail(ErrorCode::kParseFailure, "context width mismatch: " + line);
      }
      Row& row = model.rows_[ctx];
      row.counts.assign(vsize, 0);
      std::istringstream cs(line.substr(bar + 1));
      std::string cell;
      while (cs >> cell) {
        const auto colon = cell.find(':');
        if (colon == std::string::npos) fail(ErrorCode::kParseFailure, "bad cell: " + cell);
        const auto tok = std::stoul(cell.substr(0, colon));
        const auto cnt = std::stoul(cell.substr(colon + 1));
        if (tok >= vsize) fail(ErrorCode::kParseFailure, "token out of range: " + cell);
        row.counts[tok] = static_cast<std::uint32_t>(cnt);
        row.total += cnt;
      }
    }
    return model;
  }

 private:
  static void expect_key(const std::string& got, const char* want) {
    if (got != want) {
      fail(ErrorCode::kParseFailure, "expected '" + std::string(want) +
                                         "', found '" + got + "'");
    }
  }

  void check_token(TokenId token) const {
    if (token < 0 || static_cast<std::size_t>(token) >= vocab_size_) {
      fail(ErrorCode::kUnknownToken, "token id " + std::to_string(token));
    }
  }

  std::size_t vocab_size_;
  int order_;
  double alpha_;
  std::uint64_t vocab_hash_;
  std::map<std::vector<TokenId>, Row> rows_;
};

/// Reference generator pre-trained on a plain-text corpus, one sentence per
/// line. Blank lines are skipped.
inline CountNGramModel train_ngram(const Vocabulary& vocab,
                                   std::span<const std::string> corpus,
                                   int order = 2, double alpha = 1.0) {
  CountNGramModel model(vocab.size(), order, alpha, vocab.hash());
  for (const auto& line : corpus) {
    if (trim(line).empty()) continue;
    model.observe(tokenize(line, vocab).ids);
  }
  return model;
}

// ============================================================================
// Losses
// ============================================================================

/// -sum_t ln p(s_t | [x, S_{t-1}]), natural log. Returns +inf when any
/// conditional probability is zero.
inline double perplexity_loss(const GeneratorModel& model,
                              std::span<const TokenId> prompt,
                              std::span<const TokenId> suffix) {
  std::vector<TokenId> ctx(prompt.begin(), prompt.end());
  ctx.reserve(prompt.size() + suffix.size());
  double loss = 0.0;
  for (TokenId s : suffix) {
    const double p = model.probability(ctx, s);
    if (!(p > 0.0)) return std::numeric_limits<double>::infinity();
    loss -= std::log(p);
    ctx.push_back(s);
  }
  return loss;
}

inline double perplexity_loss(const GeneratorModel& model, const TokenSeq& prompt,
                              const TokenSeq& suffix) {
  return perplexity_loss(model, prompt.ids, suffix.ids);
}

/// Like perplexity_loss but throws DegenerateProbability instead of
/// returning the +inf sentinel.
inline double perplexity_loss_checked(const GeneratorModel& model,
                                      const TokenSeq& prompt,
                                      const TokenSeq& suffix) {
  const double loss = perplexity_loss(model, prompt, suffix);
  if (std::isinf(loss)) {
    fail(ErrorCode::kDegenerateProbability,
         "zero probability inside suffix '" + suffix.text + "'");
  }
  return loss;
}

/// exp(mean per-token NLL); the first token is conditioned on the empty
/// context.
inline double prompt_perplexity(const GeneratorModel& model,
                                std::span<const TokenId> tokens) {
  if (tokens.empty()) fail(ErrorCode::kEmptySequence, "perplexity of empty sequence");
  const double nll = perplexity_loss(model, std::span<const TokenId>{}, tokens);
  return std::exp(nll / static_cast<double>(tokens.size()));
}

inline double prompt_perplexity(const GeneratorModel& model, const TokenSeq& seq) {
  return prompt_perplexity(model, std::span<const TokenId>(seq.ids));
}

inline double cross_entropy(const GeneratorModel& model,
                            const FineTuneBatch& batch) {
  double total = 0.0;
  for (const auto& pair : batch) total += perplexity_loss(model, pair.prompt, pair.suffix);
  return total;
}

struct FineTuneResult {
  double loss_before = 0.0;
  double loss_after = 0.0;
  bool updated = false;
};

/// Supervised fine-tuning pass: L_CE over the batch before and after
/// `epochs` updates.
inline FineTuneResult fine_tune(GeneratorModel& model, const FineTuneBatch& batch,
                                int epochs = 1) {
  if (!model.trainable()) fail(ErrorCode::kNotTrainable, "model is read-only");
  FineTuneResult r;
  if (batch.empty()) return r;
  for (const auto& pair : batch) {
    if (pair.suffix.empty()) fail(ErrorCode::kInvalidArgument, "empty suffix in batch");
  }
  r.loss_before = cross_entropy(model, batch);
  for (int e = 0; e < epochs; ++e) model.apply_update(batch);
  r.loss_after = cross_entropy(model, batch);
  r.updated = epochs > 0;
  return r;
}

// ============================================================================
// Decoding
// ============================================================================

struct DecodeMode {
  enum class Kind { kGreedy, kSample } kind = Kind::kGreedy;
  std::uint64_t seed = 0;

  static DecodeMode greedy() { return {}; }
  static DecodeMode sample(std::uint64_t seed) { return {Kind::kSample, seed}; }
};

/// Autoregressive decode of exactly `length` tokens after `prompt`. Masked
/// ids are forced to zero before selection; greedy breaks ties toward the
/// lowest id.
inline TokenSeq decode_suffix(const GeneratorModel& model, const TokenSeq& prompt,
                              std::size_t length, const BannedIndicatorSet* mask,
                              DecodeMode mode, const Vocabulary& vocab) {
  Rng rng(mode.seed);
  std::vector<TokenId> ctx = prompt.ids;
  std::vector<TokenId> out;
  out.reserve(length);
  for (std::size_t step = 0; step < length; ++step) {
    auto dist = model.next_token(ctx);
    if (mask) {
      for (TokenId id : mask->indices) {
        if (static_cast<std::size_t>(id) < dist.size()) {
          dist.probs[static_cast<std::size_t>(id)] = 0.0;
        }
      }
    }
    const double mass = dist.sum();
    if (!(mass > 0.0)) fail(ErrorCode::kAllMasked, "mask covers the entire support");
    TokenId pick = -1;
    if (mode.kind == DecodeMode::Kind::kGreedy) {
      double best = -1.0;
      for (std::size_t i = 0; i < dist.size(); ++i) {
        if (dist.probs[i] > best) {
          best = dist.probs[i];
          pick = static_cast<TokenId>(i);
        }
      }
    } else {
      double u = rng.uniform01() * mass;
      for (std::size_t i = 0; i < dist.size(); ++i) {
        if (dist.probs[i] <= 0.0) continue;
        pick = static_cast<TokenId>(i);
        if (u < dist.probs[i]) break;
        u -= dist.probs[i];
      }
    }
    out.push_back(pick);
    ctx.push_back(pick);
  }
  return make_seq(std::move(out), vocab);
}

}  // namespace advsuffix
