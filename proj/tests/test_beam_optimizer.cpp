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

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "advsuffix/beam_optimizer.hpp"
#include "fixtures.hpp"

namespace advsuffix {
namespace {

template <class Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::kInvalidArgument;
}

/// Small search world: a word-level vocabulary, n-gram generator and aux
/// trained on a short corpus, and a hashing mock with two trigger words.
struct World {
  Vocabulary vocab;
  CountNGramModel generator;
  CountNGramModel aux;
  HashingMockTarget target;
  UnsafeWordList words;
  BannedIndicatorSet banned;
  Embedding image;
  SearchProblem problem;

  World(std::vector<std::string> tokens, std::vector<std::string> corpus,
        std::map<std::string, double> triggers, std::uint64_t seed = 5)
      : vocab(std::move(tokens)),
        generator(train_ngram(vocab, corpus)),
        aux(train_ngram(vocab, corpus)),
        target(HashingMockConfig{16, seed, std::move(triggers), 0.0}),
        words("toy", {"zz"}) {
    image = synthetic_cluster(target.unsafe_axis(), 1, 0.3, seed).front();
    problem.vocab = &vocab;
    problem.generator = &generator;
    problem.aux = &aux;
    problem.target = &target;
    problem.words = &words;
    problem.concept_embeddings = synthetic_cluster(target.unsafe_axis(), 3, 0.5, seed + 1);
    problem.policy = PenaltyPolicy::none();
  }
};

World four_token_world() {
  return World({" a", " b", " c", " d"}, {" a b c d a", " b b a c", " d c"},
               {{"c", 0.3}, {"d", 0.2}});
}

struct OracleBest {
  std::vector<TokenId> ids;
  double score = 0.0;
};

/// Brute force over every suffix of length T. Objective terms are computed
/// from the public building blocks without the search's incremental sums.
OracleBest exhaustive_argmin(const World& w, const TokenSeq& x, std::size_t T, double lambda) {
  const std::size_t v = w.vocab.size();
  std::size_t total = 1;
  for (std::size_t t = 0; t < T; ++t) total *= v;
  OracleBest best;
  bool have = false;
  for (std::size_t code = 0; code < total; ++code) {
    std::vector<TokenId> ids(T);
    std::size_t c = code;
    for (std::size_t t = T; t-- > 0;) {
      ids[t] = static_cast<TokenId>(c % v);
      c /= v;
    }
    TokenSeq s{ids, detokenize(ids, w.vocab)};
    const double align = alignment_loss(w.target.generate(x.text + s.text, 0), w.image,
                                        w.problem.concept_embeddings);
    const double per = perplexity_loss(w.aux, x, s);
    const double score = -align + lambda * per;
    if (!have || score < best.score || (score == best.score && ids < best.ids)) {
      best = {ids, score};
      have = true;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

TEST(Objective, Composition) {
  const auto v = testing::vocab_of({"p", "q", "r", "s"});
  const LookupTarget target(3, {{"pqrs", {1, 0, 0}}, {"p", {0, 1, 0}}});
  const CountNGramModel aux(4);
  const UnsafeWordList words("t", {"zz"});
  SearchProblem problem;
  problem.vocab = &v;
  problem.generator = &aux;
  problem.aux = &aux;
  problem.target = &target;
  problem.words = &words;
  problem.concept_embeddings = {{0, 1, 0}, {0, 0, 1}};
  const TokenSeq x = tokenize("p", v);
  const TokenSeq s = tokenize("qrs", v);

  const auto b = jailbreak_objective(x, s, problem, {1, 0, 0}, 0.1);
  EXPECT_DOUBLE_EQ(b.align, 1.0);
  EXPECT_NEAR(b.per, 4.158883, 1e-6);
  EXPECT_NEAR(b.composed, -0.584112, 1e-6);
  EXPECT_NEAR(b.composed, b.recompute(), 1e-12);

  EXPECT_EQ(jailbreak_objective(x, s, problem, {1, 0, 0}, 0.0).composed, -1.0);
  const auto empty = jailbreak_objective(x, TokenSeq{}, problem, {1, 0, 0}, 7.0);
  EXPECT_EQ(empty.per, 0.0);
  EXPECT_DOUBLE_EQ(empty.composed, -0.5);
}

// ---------------------------------------------------------------------------
// Candidate sampling
// ---------------------------------------------------------------------------

TEST(SampleCandidates, Examples) {
  Rng rng(51);
  for (auto method : {SamplingMethod::kMultinomial, SamplingMethod::kGumbelTopK}) {
    auto all = sample_candidates({{0.1, 0.2, 0.3, 0.4}}, 4, rng, method);
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, (std::vector<TokenId>{0, 1, 2, 3}));
    EXPECT_EQ(sample_candidates({{0, 0, 1, 0}}, 1, rng, method), (std::vector<TokenId>{2}));
    auto small = sample_candidates({{0.5, 0, 0.5, 0}}, 12, rng, method);
    std::sort(small.begin(), small.end());
    EXPECT_EQ(small, (std::vector<TokenId>{0, 2}));
    EXPECT_EQ(code_of([&] { sample_candidates({{0, 0}}, 1, rng, method); }), ErrorCode::kEmptySupport);
  }
}

TEST(SampleCandidates, FirstDrawFrequency) {
  for (auto method : {SamplingMethod::kMultinomial, SamplingMethod::kGumbelTopK}) {
    Rng rng(52);
    int zeros = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) zeros += sample_candidates({{0.7, 0.3}}, 1, rng, method)[0] == 0;
    EXPECT_NEAR(zeros / double(n), 0.70, 0.01);
  }
}

TEST(SampleCandidates, SecondDrawMatchesWithoutReplacementLaw) {
  // P(second = 2) = sum_i p_i * p_2 / (1 - p_i) over i != 2.
  const std::vector<double> p{0.5, 0.3, 0.2};
  const double expect = p[0] * p[2] / (1 - p[0]) + p[1] * p[2] / (1 - p[1]);
  for (auto method : {SamplingMethod::kMultinomial, SamplingMethod::kGumbelTopK}) {
    Rng rng(53);
    int hits = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) hits += sample_candidates({p}, 2, rng, method)[1] == 2;
    EXPECT_NEAR(hits / double(n), expect, 0.01);
  }
}

TEST(SampleCandidates, DistinctSupportedAndSeededProperty) {
  Rng gen(54);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t v = 1 + gen.uniform_index(12);
    const auto p = testing::random_distribution(gen, v, 0.3);
    const std::size_t k = 1 + gen.uniform_index(14);
    const auto seed = gen.next_u64();
    Rng a(seed), b(seed);
    const auto ids = sample_candidates({p}, k, a);
    ASSERT_EQ(ids, sample_candidates({p}, k, b));
    std::size_t support = 0;
    for (double x : p) support += x > 0.0;
    ASSERT_EQ(ids.size(), std::min(k, support));
    ASSERT_EQ(std::set<TokenId>(ids.begin(), ids.end()).size(), ids.size());
    for (TokenId id : ids) ASSERT_GT(p[static_cast<std::size_t>(id)], 0.0);
  }
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

Beam scored(std::vector<TokenId> ids, double score) {
  Beam b;
  b.suffix.ids = std::move(ids);
  b.breakdown = ObjectiveBreakdown::compose(-score, 0.0, 0.0);
  return b;
}

TEST(SelectTopB, Examples) {
  const auto top = select_top_b({scored({0}, 0.9), scored({1}, 0.1), scored({2}, 0.5), scored({3}, 0.3)}, 2);
  ASSERT_EQ(top.size(), 2u);
  EXPECT_EQ(top[0].suffix.ids, (std::vector<TokenId>{1}));
  EXPECT_EQ(top[1].suffix.ids, (std::vector<TokenId>{3}));

  const auto tie = select_top_b({scored({2, 0}, 0.5), scored({1, 9}, 0.5), scored({1, 3}, 0.5)}, 1);
  EXPECT_EQ(tie[0].suffix.ids, (std::vector<TokenId>{1, 3}));

  EXPECT_EQ(select_top_b({scored({0}, 1), scored({1}, 2), scored({2}, 3)}, 4).size(), 3u);
}

TEST(SelectTopB, KeptNeverWorseThanDiscardedProperty) {
  Rng rng(55);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Beam> cands;
    for (std::size_t i = 0; i < 1 + rng.uniform_index(20); ++i) {
      cands.push_back(scored({static_cast<TokenId>(rng.uniform_index(5)), static_cast<TokenId>(i)},
                             double(rng.uniform_index(4))));
    }
    const std::size_t b = 1 + rng.uniform_index(6);
    const auto kept = select_top_b(cands, b);
    ASSERT_EQ(kept.size(), std::min(b, cands.size()));
    for (const auto& c : cands) {
      const bool is_kept = std::any_of(kept.begin(), kept.end(),
                                       [&](const Beam& k) { return k.suffix.ids == c.suffix.ids; });
      if (is_kept) continue;
      for (const auto& k : kept) ASSERT_TRUE(beam_before(k, c));
    }
  }
}

// ---------------------------------------------------------------------------
// Search
// ---------------------------------------------------------------------------

TEST(OptimizeSuffix, FullWidthEqualsExhaustiveOracle) {
  for (double lambda : {0.0, 0.1, 1.0}) {
    World w = four_token_world();
    const TokenSeq x = tokenize(" a", w.vocab);
    SearchConfig cfg;
    cfg.T = 2;
    cfg.k = 4;
    cfg.b = 16;
    cfg.lambda = lambda;
    cfg.seed = 3;
    const auto r = optimize_suffix(x, cfg, w.problem, w.image);
    const auto oracle = exhaustive_argmin(w, x, 2, lambda);
    EXPECT_EQ(r.best.suffix.ids, oracle.ids) << "lambda " << lambda;
    EXPECT_NEAR(r.best.score(), oracle.score, 1e-9);
    EXPECT_NEAR(r.best.score(), r.best.breakdown.recompute(), 1e-9);
  }
}

TEST(OptimizeSuffix, ExhaustiveAtDepthThree) {
  World w = four_token_world();
  const TokenSeq x = tokenize(" b", w.vocab);
  SearchConfig cfg;
  cfg.T = 3;
  cfg.k = 4;
  cfg.b = 64;
  cfg.lambda = 0.1;
  cfg.sampling = SamplingMethod::kGumbelTopK;
  const auto r = optimize_suffix(x, cfg, w.problem, w.image);
  const auto oracle = exhaustive_argmin(w, x, 3, 0.1);
  EXPECT_EQ(r.best.suffix.ids, oracle.ids);
  EXPECT_NEAR(r.best.score(), oracle.score, 1e-9);
}

TEST(OptimizeSuffix, BreakdownMatchesDirectObjective) {
  World w = four_token_world();
  const TokenSeq x = tokenize(" a c", w.vocab);
  SearchConfig cfg;
  cfg.T = 5;
  cfg.k = 3;
  cfg.b = 2;
  const auto r = optimize_suffix(x, cfg, w.problem, w.image);
  for (const auto& beam : r.final_beams) {
    const auto direct = jailbreak_objective(x, beam.suffix, w.problem, w.image, cfg.lambda);
    EXPECT_NEAR(beam.breakdown.align, direct.align, 1e-12);
    EXPECT_NEAR(beam.breakdown.per, direct.per, 1e-9);
    EXPECT_NEAR(beam.score(), direct.composed, 1e-9);
    EXPECT_EQ(beam.text, x.text + beam.suffix.text);
  }
}

TEST(OptimizeSuffix, DeterministicAndThreadIndependent) {
  World w = four_token_world();
  const TokenSeq x = tokenize(" d", w.vocab);
  SearchConfig cfg;
  cfg.T = 6;
  cfg.k = 3;
  cfg.b = 2;
  cfg.seed = 77;
  const auto a = optimize_suffix(x, cfg, w.problem, w.image);
  const auto b = optimize_suffix(x, cfg, w.problem, w.image);
  cfg.jobs = 4;
  const auto c = optimize_suffix(x, cfg, w.problem, w.image);
  EXPECT_EQ(a.best.suffix, b.best.suffix);
  EXPECT_EQ(trace_to_jsonl(a.trace), trace_to_jsonl(b.trace));
  EXPECT_EQ(trace_to_jsonl(a.trace), trace_to_jsonl(c.trace));
  EXPECT_EQ(a.trace.size(), cfg.T);
}

TEST(OptimizeSuffix, TraceInvariantsProperty) {
  Rng rng(56);
  for (int trial = 0; trial < 40; ++trial) {
    World w = four_token_world();
    SearchConfig cfg;
    cfg.T = 1 + rng.uniform_index(5);
    cfg.k = 1 + rng.uniform_index(4);
    cfg.b = 1 + rng.uniform_index(5);
    cfg.lambda = rng.uniform01();
    cfg.seed = rng.next_u64();
    const TokenSeq x = tokenize(" a", w.vocab);
    const auto r = optimize_suffix(x, cfg, w.problem, w.image);
    for (const auto& step : r.trace) {
      std::vector<const CandidateRecord*> kept, dropped;
      for (const auto& c : step.candidates) {
        ASSERT_EQ(c.ids.size(), step.step);
        ASSERT_NEAR(c.breakdown.composed, c.breakdown.recompute(), 1e-9);
        (c.kept ? kept : dropped).push_back(&c);
      }
      ASSERT_LE(kept.size(), cfg.b);
      for (auto* k : kept) {
        for (auto* d : dropped) {
          ASSERT_TRUE(k->breakdown.composed < d->breakdown.composed ||
                      (k->breakdown.composed == d->breakdown.composed && k->ids < d->ids));
        }
      }
    }
    ASSERT_EQ(r.best.suffix.ids.size(), cfg.T);
  }
}

TEST(OptimizeSuffix, HardMaskNeverEmitsBannedProperty) {
  Rng rng(57);
  for (int trial = 0; trial < 60; ++trial) {
    World w = four_token_world();
    BannedIndicatorSet banned;
    for (TokenId id = 0; id < 4; ++id) {
      if (rng.uniform01() < 0.4) banned.indices.insert(id);
    }
    if (banned.size() == 4) banned.indices.erase(static_cast<TokenId>(rng.uniform_index(4)));
    w.problem.banned = &banned;
    w.problem.policy = PenaltyPolicy{};
    SearchConfig cfg;
    cfg.T = 4;
    cfg.k = 3;
    cfg.b = 3;
    cfg.seed = rng.next_u64();
    const auto r = optimize_suffix(tokenize(" a", w.vocab), cfg, w.problem, w.image);
    for (const auto& step : r.trace) {
      for (const auto& c : step.candidates) {
        for (TokenId id : c.ids) ASSERT_FALSE(banned.contains(id));
      }
    }
  }
}

TEST(OptimizeSuffix, SecondaryPenaltyPushesWordsOut) {
  // " z" + "z" spells "zz" from two tokens that are not banned individually.
  World w({" a", " z", "z"}, {" z z z z", " a z"}, {{"zz", 5.0}});
  w.problem.policy = PenaltyPolicy{};
  SearchConfig cfg;
  cfg.T = 3;
  cfg.k = 3;
  cfg.b = 9;
  cfg.lambda = 0.0;
  const auto r = optimize_suffix(tokenize(" a", w.vocab), cfg, w.problem, w.image);
  EXPECT_FALSE(r.best.penalized);
  EXPECT_EQ(r.best.text.find("zz"), std::string::npos);

  // The same search without the penalty goes straight for the trigger.
  w.problem.policy = PenaltyPolicy::none();
  const auto raw = optimize_suffix(tokenize(" a", w.vocab), cfg, w.problem, w.image);
  EXPECT_NE(raw.best.text.find("zz"), std::string::npos);
}

TEST(OptimizeSuffix, FullyMaskedIsDegenerate) {
  World w = four_token_world();
  BannedIndicatorSet banned;
  banned.indices = {0, 1, 2, 3};
  w.problem.banned = &banned;
  w.problem.policy = PenaltyPolicy{};
  EXPECT_EQ(code_of([&] { optimize_suffix(tokenize(" a", w.vocab), SearchConfig{}, w.problem, w.image); }),
            ErrorCode::kSearchDegenerate);
}

TEST(OptimizeSuffix, RejectsBadInputs) {
  World w = four_token_world();
  SearchConfig cfg;
  EXPECT_EQ(code_of([&] { optimize_suffix(TokenSeq{}, cfg, w.problem, w.image); }), ErrorCode::kInvalidArgument);
  cfg.b = 0;
  EXPECT_EQ(code_of([&] { optimize_suffix(tokenize(" a", w.vocab), cfg, w.problem, w.image); }),
            ErrorCode::kInvalidArgument);
  cfg.b = 4;
  w.problem.concept_embeddings.clear();
  EXPECT_EQ(code_of([&] { optimize_suffix(tokenize(" a", w.vocab), cfg, w.problem, w.image); }),
            ErrorCode::kEmptyInput);
}

TEST(OptimizeSuffix, TraceJsonl) {
  World w = four_token_world();
  SearchConfig cfg;
  cfg.T = 2;
  cfg.k = 2;
  cfg.b = 1;
  const auto r = optimize_suffix(tokenize(" a", w.vocab), cfg, w.problem, w.image);
  const auto text = trace_to_jsonl(r.trace);
  std::size_t lines = 0;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    ++lines;
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("candidates"));
    EXPECT_EQ(j["kept"].size(), 1u);
  }
  EXPECT_EQ(lines, 2u);
}

}  // namespace
}  // namespace advsuffix
