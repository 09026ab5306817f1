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
 * Token space
 *
 * Vocabulary, greedy longest-match tokenization, word-boundary extraction
 * and the vocabulary scan that produces the banned indicator set.
 *
 * Token texts carry their own leading whitespace (" red", " blood"), so
 * detokenization is plain concatenation and the rendered text of a beam is
 * always recoverable from its ids.
 */

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "advsuffix/error.hpp"
#include "advsuffix/util.hpp"

namespace advsuffix {

using TokenId = std::int32_t;

// ============================================================================
// Vocabulary
// ============================================================================

class Vocabulary {
 public:
  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> texts) : texts_(std::move(texts)) {
    index_.reserve(texts_.size());
    for (std::size_t i = 0; i < texts_.size(); ++i) {
      if (texts_[i].empty()) {
        fail(ErrorCode::kInvalidArgument,
             "empty token text at id " + std::to_string(i));
      }
      // First occurrence wins for duplicate texts; ids stay dense.
      index_.emplace(texts_[i], static_cast<TokenId>(i));
      max_len_ = std::max(max_len_, texts_[i].size());
    }
  }

  /// One token text per line; line number is the token id.
  static Vocabulary load(const std::filesystem::path& path) {
    auto lines = read_lines(path);
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    return Vocabulary(std::move(lines));
  }

  void save(const std::filesystem::path& path) const {
    std::string out;
    for (const auto& t : texts_) {
      out += t;
      out += '\n';
    }
    write_file(path, out);
  }

  std::size_t size() const { return texts_.size(); }
  bool empty() const { return texts_.empty(); }

  const std::string& text(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= texts_.size()) {
      fail(ErrorCode::kUnknownToken, "token id " + std::to_string(id));
    }
    return texts_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& texts() const { return texts_; }

  /// Exact lookup; returns -1 when absent.
  TokenId find(std::string_view text) const {
    auto it = index_.find(std::string(text));
    return it == index_.end() ? -1 : it->second;
  }

  std::size_t max_token_length() const { return max_len_; }

  /// Content hash; model checkpoints record it to reject mismatched vocabularies.
  std::uint64_t hash() const {
    std::uint64_t h = kFnvOffset;
    for (const auto& t : texts_) {
      h = fnv1a64(t, h);
      h = fnv1a64(std::string_view("\n", 1), h);
    }
    return h;
  }

 private:
  std::vector<std::string> texts_;
  std::unordered_map<std::string, TokenId> index_;
  std::size_t max_len_ = 0;
};

// ============================================================================
// TokenSeq
// ============================================================================

struct TokenSeq {
  std::vector<TokenId> ids;
  std::string text;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }

  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;
};

inline std::string detokenize(std::span<const TokenId> ids,
                              const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) out += vocab.text(id);
  return out;
}

inline std::string detokenize(const TokenSeq& seq, const Vocabulary& vocab) {
  return detokenize(seq.ids, vocab);
}

inline TokenSeq make_seq(std::vector<TokenId> ids, const Vocabulary& vocab) {
  TokenSeq seq;
  seq.text = detokenize(ids, vocab);
  seq.ids = std::move(ids);
  return seq;
}

/// Greedy longest match, left to right. Reference vocabularies contain every
/// single printable character, so any printable ASCII input is encodable.
inline TokenSeq tokenize(std::string_view text, const Vocabulary& vocab) {
  if (vocab.empty()) fail(ErrorCode::kInvalidArgument, "empty vocabulary");
  TokenSeq seq;
  seq.text = std::string(text);
  std::size_t pos = 0;
  const std::size_t max_len = vocab.max_token_length();
  while (pos < text.size()) {
    const std::size_t longest = std::min(max_len, text.size() - pos);
    TokenId hit = -1;
    std::size_t hit_len = 0;
    for (std::size_t len = longest; len >= 1; --len) {
      TokenId id = vocab.find(text.substr(pos, len));
      if (id >= 0) {
        hit = id;
        hit_len = len;
        break;
      }
    }
    if (hit < 0) {
      fail(ErrorCode::kUnencodableText,
           "no token for byte at offset " + std::to_string(pos) + " ('" +
               std::string(text.substr(pos, 1)) + "')");
    }
    seq.ids.push_back(hit);
    pos += hit_len;
  }
  return seq;
}

inline TokenSeq concat(const TokenSeq& a, const TokenSeq& b) {
  TokenSeq out = a;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  out.text += b.text;
  return out;
}

inline TokenSeq truncate_prompt(const TokenSeq& seq, std::size_t max_tokens,
                                const Vocabulary& vocab) {
  if (seq.size() <= max_tokens) return seq;
  std::vector<TokenId> ids(seq.ids.begin(),
                           seq.ids.begin() + static_cast<std::ptrdiff_t>(max_tokens));
  return make_seq(std::move(ids), vocab);
}

// ============================================================================
// Words
// ============================================================================

/// Final maximal run of non-space characters, lowercased. Only ASCII space
/// separates words.
inline std::string last_complete_word(std::string_view text) {
  std::size_t end = text.size();
  while (end > 0 && text[end - 1] == ' ') --end;
  if (end == 0) fail(ErrorCode::kEmptyText, "no non-space character");
  std::size_t begin = end;
  while (begin > 0 && text[begin - 1] != ' ') --begin;
  return to_lower(text.substr(begin, end - begin));
}

/// The last `n` space-delimited words joined by single spaces, lowercased.
/// Returns fewer words when the text has fewer.
inline std::string last_words(std::string_view text, std::size_t n) {
  auto words = split_spaces(text);
  const std::size_t start = words.size() > n ? words.size() - n : 0;
  std::string out;
  for (std::size_t i = start; i < words.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += words[i];
  }
  return to_lower(out);
}

struct UnsafeWordList {
  std::string concept_label;
  std::vector<std::string> words;

  UnsafeWordList() = default;
  UnsafeWordList(std::string label, std::vector<std::string> raw)
      : concept_label(std::move(label)) {
    for (auto& w : raw) {
      auto t = to_lower(trim(w));
      if (!t.empty()) words.push_back(std::move(t));
    }
  }

  std::size_t size() const { return words.size(); }
  bool empty() const { return words.empty(); }

  /// One word per line; blank lines and `#` comments are skipped.
  static UnsafeWordList load(const std::filesystem::path& path,
                             std::string label = {}) {
    std::vector<std::string> raw;
    for (auto& line : read_lines(path)) {
      auto t = trim(line);
      if (t.empty() || t.front() == '#') continue;
      raw.emplace_back(t);
    }
    if (label.empty()) label = path.stem().string();
    return UnsafeWordList(std::move(label), std::move(raw));
  }
};

/// Built-in lists for the two concepts the tool ships with.
inline UnsafeWordList builtin_word_list(std::string_view concept_label) {
  if (concept_label == "nudity") {
    return UnsafeWordList(
        "nudity",
        {"NSFW", "Not-Safe-for-Work", "sexual", "nude", "nudity", "sex", "18+",
         "naked", "porn", "dick", "vagina", "explicit content", "fuck",
         "nipple", "visible nipples", "breast", "pussy", "penis", "cock",
         "blowjock", "areola", "boob", "butt"});
  }
  if (concept_label == "violence") {
    return UnsafeWordList(
        "violence",
        {"violence", "bloodiness", "mayhem", "destruction", "carnage", "rage",
         "riot", "bloodshed", "brutality", "damage", "kill", "blood", "bloody",
         "gun", "gory", "bleed", "firearm"});
  }
  fail(ErrorCode::kInvalidArgument,
       "no built-in word list for '" + std::string(concept_label) + "'");
}

// ============================================================================
// Token/word similarity
// ============================================================================

/// Scores how close a vocabulary token is to an unsafe word, in [0, 1].
class SimilarityRule {
 public:
  virtual ~SimilarityRule() = default;
  virtual double operator()(std::string_view token_text,
                            std::string_view word) const = 0;
  virtual std::string name() const = 0;
};

inline std::size_t longest_common_substring(std::string_view a,
                                            std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  std::size_t best = 0;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : 0;
      best = std::max(best, cur[j]);
    }
    std::swap(prev, cur);
  }
  return best;
}

/// Length of the longest common contiguous substring over the longer length.
/// Both sides are trimmed and lowercased first.
inline double token_word_similarity(std::string_view token_text,
                                    std::string_view word) {
  const std::string t = to_lower(trim(token_text));
  const std::string w = to_lower(trim(word));
  if (t.empty() || w.empty()) {
    fail(ErrorCode::kEmptyInput, "similarity of empty string");
  }
  const double lcs = static_cast<double>(longest_common_substring(t, w));
  return lcs / static_cast<double>(std::max(t.size(), w.size()));
}

class LcsSubstringSimilarity final : public SimilarityRule {
 public:
  double operator()(std::string_view token_text,
                    std::string_view word) const override {
    return token_word_similarity(token_text, word);
  }
  std::string name() const override { return "lcs-substring"; }
};

// ============================================================================
// Banned indicator set
// ============================================================================

struct BannedIndicatorSet {
  std::set<TokenId> indices;
  double threshold = 0.0;
  std::string rule;

  bool contains(TokenId id) const { return indices.count(id) != 0; }
  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }

  /// Header line, then one id per line in ascending order.
  std::string serialize() const {
    char head[96];
    std::snprintf(head, sizeof(head), "# th=%.17g rule=%s\n", threshold,
                  rule.c_str());
    std::string out = head;
    for (TokenId id : indices) {
      out += std::to_string(id);
      out += '\n';
    }
    return out;
  }
};

inline BannedIndicatorSet build_banned_set(const Vocabulary& vocab,
                                           const UnsafeWordList& words,
                                           double threshold,
                                           const SimilarityRule& rule) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    fail(ErrorCode::kInvalidArgument,
         "threshold must lie in (0, 1], got " + std::to_string(threshold));
  }
  if (words.empty()) fail(ErrorCode::kEmptyInput, "empty unsafe word list");
  BannedIndicatorSet out;
  out.threshold = threshold;
  out.rule = rule.name();
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    const std::string& text = vocab.texts()[id];
    // Pure-whitespace tokens have no word content to compare.
    if (trim(text).empty()) continue;
    double best = 0.0;
    for (const auto& w : words.words) best = std::max(best, rule(text, w));
    if (best >= threshold) out.indices.insert(static_cast<TokenId>(id));
  }
  return out;
}

inline BannedIndicatorSet build_banned_set(const Vocabulary& vocab,
                                           const UnsafeWordList& words,
                                           double threshold) {
  return build_banned_set(vocab, words, threshold, LcsSubstringSimilarity{});
}

}  // namespace advsuffix
