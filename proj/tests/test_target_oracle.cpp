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

#include "advsuffix/target_oracle.hpp"
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

// Cosine computed independently, in long double, without clamping.
double cosine_oracle(const Embedding& a, const Embedding& b) {
  long double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += (long double)a[i] * b[i];
    aa += (long double)a[i] * a[i];
    bb += (long double)b[i] * b[i];
  }
  return static_cast<double>(ab / std::sqrt(aa * bb));
}

ConceptTable orthonormal_concepts() {
  return ConceptTable({{"w1", {0, 1, 0}}, {"w2", {0, 0, 1}}});
}

// ---------------------------------------------------------------------------
// similarity
// ---------------------------------------------------------------------------

TEST(Similarity, Examples) {
  EXPECT_DOUBLE_EQ(similarity({1, 0, 0}, {1, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(similarity({1, 0}, {0, 1}), 0.0);
  EXPECT_NEAR(similarity({3, 4}, {4, 3}), 0.96, 1e-12);
}

TEST(Similarity, Errors) {
  EXPECT_EQ(code_of([] { similarity({0, 0}, {1, 0}); }), ErrorCode::kZeroVector);
  EXPECT_EQ(code_of([] { similarity({1, 0}, {1, 0, 0}); }), ErrorCode::kDimensionMismatch);
}

TEST(Similarity, SymmetricBoundedScaleInvariantProperty) {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 1 + rng.uniform_index(8);
    const auto a = testing::random_embedding(rng, d);
    const auto b = testing::random_embedding(rng, d);
    const double s = similarity(a, b);
    ASSERT_EQ(s, similarity(b, a));
    ASSERT_GE(s, -1.0);
    ASSERT_LE(s, 1.0);
    ASSERT_NEAR(s, cosine_oracle(a, b), 1e-12);
    Embedding scaled = a;
    const double c = 0.01 + 100.0 * rng.uniform01();
    for (double& x : scaled) x *= c;
    ASSERT_NEAR(similarity(scaled, b), s, 1e-12);
  }
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

TEST(Generate, LookupReturnsFixture) {
  const LookupTarget t(3, {{"alpha", {0.5, -1, 2}}});
  EXPECT_EQ(generate(t, "alpha", 0), (Embedding{0.5, -1, 2}));
  EXPECT_EQ(code_of([&] { generate(t, "beta", 0); }), ErrorCode::kBackendFailure);
  EXPECT_EQ(code_of([&] { generate(t, "", 0); }), ErrorCode::kInvalidArgument);
}

TEST(Generate, MockIsPureInPromptAndSeed) {
  HashingMockConfig cfg;
  cfg.hash_seed = 4;
  cfg.noise = 0.1;
  const HashingMockTarget t(cfg);
  const auto a = t.generate("a red bicycle", 9);
  EXPECT_EQ(a, t.generate("a red bicycle", 9));
  EXPECT_NE(a, t.generate("a red bicycle", 10));
  EXPECT_EQ(a.size(), 64u);
  for (double x : a) EXPECT_TRUE(std::isfinite(x));
}

TEST(Generate, MockWithoutNoiseIgnoresSeed) {
  const HashingMockTarget t(HashingMockConfig{});
  EXPECT_EQ(t.generate("a cat", 1), t.generate("a cat", 2));
}

TEST(Generate, MockFormulaByHand) {
  // One word, no bigrams: a single +-1 feature normalized to unit length,
  // then the trigger gain on axis 0.
  HashingMockConfig cfg;
  cfg.dimension = 8;
  cfg.hash_seed = 3;
  cfg.triggers = {{"knife", 0.35}};
  const HashingMockTarget t(cfg);
  const auto e = t.generate("Knife!", 0);
  const std::uint64_t h = mix64(fnv1a64("knife") ^ 3);
  const std::size_t slot = 1 + h % 7;
  Embedding expect(8, 0.0);
  expect[slot] = (h >> 63) ? -1.0 : 1.0;
  expect[0] = 0.35;
  EXPECT_EQ(e, expect);
  EXPECT_NEAR(similarity(e, t.unsafe_axis()), 0.35 / std::sqrt(1 + 0.35 * 0.35), 1e-12);
}

TEST(Generate, TriggerRaisesUnsafeCosine) {
  HashingMockConfig cfg;
  cfg.hash_seed = 11;
  cfg.triggers = {{"knife", 0.35}, {"blood", 0.6}};
  const HashingMockTarget t(cfg);
  const auto axis = t.unsafe_axis();
  Rng rng(32);
  const std::string alphabet = "abcdefghij ";
  for (int trial = 0; trial < 200; ++trial) {
    std::string p = testing::random_text(rng, 30, alphabet);
    if (HashingMockTarget::words_of(p).empty()) p = "plain";
    const double base = similarity(t.generate(p, 0), axis);
    const double with = similarity(t.generate(p + " knife", 0), axis);
    const double more = similarity(t.generate(p + " knife blood", 0), axis);
    ASSERT_GT(with, base) << p;
    ASSERT_GT(more, with) << p;
  }
}

TEST(Generate, WordsOfStripsPunctuationAndCase) {
  EXPECT_EQ(HashingMockTarget::words_of("  Hello, (World)! it's "),
            (std::vector<std::string>{"hello", "world", "it's"}));
  EXPECT_TRUE(HashingMockTarget::words_of("!!! ...").empty());
}

// ---------------------------------------------------------------------------
// Concepts
// ---------------------------------------------------------------------------

TEST(Concepts, Lookup) {
  const auto t = orthonormal_concepts();
  EXPECT_EQ(embed_concept(t, "w1"), (Embedding{0, 1, 0}));
  EXPECT_EQ(embed_concept(t, "w1"), embed_concept(t, "w1"));
  EXPECT_EQ(code_of([&] { embed_concept(t, "w9"); }), ErrorCode::kUnknownConcept);
}

TEST(Concepts, FileRoundTrip) {
  const auto dir = testing::scratch_dir("concepts");
  ConceptTable t({{"two words", {0.1, 1e-300, -3}}, {"x", {1, 2, 3}}});
  write_file(dir / "c.tsv", "# header\n" + t.serialize());
  const auto back = ConceptTable::load(dir / "c.tsv");
  EXPECT_EQ(back.entries(), t.entries());
  write_file(dir / "bad.tsv", "no tab here 1 2\n");
  EXPECT_EQ(code_of([&] { ConceptTable::load(dir / "bad.tsv"); }), ErrorCode::kParseFailure);
}

// ---------------------------------------------------------------------------
// alignment_loss
// ---------------------------------------------------------------------------

TEST(AlignmentLoss, OrthonormalExamples) {
  const auto concepts = orthonormal_concepts();
  const UnsafeWordList w("test", {"w1", "w2"});
  const LookupTarget t(3, {{"p", {1, 0, 0}}, {"q", {0, 1, 0}}});
  EXPECT_DOUBLE_EQ(alignment_loss(t, "p", {1, 0, 0}, w, concepts), 1.0);
  EXPECT_DOUBLE_EQ(alignment_loss(t, "q", {1, 0, 0}, w, concepts), 0.5);
}

TEST(AlignmentLoss, EmptyWordList) {
  const auto concepts = orthonormal_concepts();
  const LookupTarget t(3, {{"p", {1, 0, 0}}});
  EXPECT_EQ(code_of([&] { alignment_loss(t, "p", {1, 0, 0}, UnsafeWordList{}, concepts); }),
            ErrorCode::kEmptyInput);
}

TEST(AlignmentLoss, MatchesRecomputationAndBounds) {
  Rng rng(33);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t d = 3;
    const auto g = testing::random_embedding(rng, d);
    const auto img = testing::random_embedding(rng, d);
    std::vector<Embedding> cs;
    for (std::size_t i = 0; i < 1 + rng.uniform_index(5); ++i) cs.push_back(testing::random_embedding(rng, d));
    double expect = cosine_oracle(g, img);
    double sum = 0;
    for (const auto& c : cs) sum += cosine_oracle(g, c);
    expect += sum / double(cs.size());
    const double got = alignment_loss(g, img, cs);
    ASSERT_NEAR(got, expect, 1e-12);
    ASSERT_GE(got, -2.0);
    ASSERT_LE(got, 2.0);
    Embedding g2 = g;
    for (double& x : g2) x *= 7.5;
    ASSERT_NEAR(alignment_loss(g2, img, cs), got, 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Unsafe image set
// ---------------------------------------------------------------------------

UnsafeImageSet indexed_set(std::size_t n) {
  UnsafeImageSet s;
  for (std::size_t i = 0; i < n; ++i) s.items.push_back({double(i), 1.0});
  return s;
}

TEST(ImageSet, FullCountIsPermutation) {
  const auto s = indexed_set(10);
  Rng rng(34);
  const auto out = sample_unsafe_images(s, 10, rng);
  std::multiset<double> seen;
  for (const auto& e : out) seen.insert(e[0]);
  EXPECT_EQ(seen.size(), 10u);
  EXPECT_EQ(std::set<double>(seen.begin(), seen.end()).size(), 10u);
}

TEST(ImageSet, SeededSelection) {
  const auto s = indexed_set(50);
  Rng a(35), b(35);
  EXPECT_EQ(sample_unsafe_images(s, 4, a), sample_unsafe_images(s, 4, b));
}

TEST(ImageSet, UniformSingleDraw) {
  const auto s = indexed_set(5);
  Rng rng(36);
  std::vector<int> counts(5, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_unsafe_images(s, 1, rng)[0][0])];
  for (int c : counts) EXPECT_NEAR(c / double(n), 0.2, 0.01);
}

TEST(ImageSet, CountBounds) {
  const auto s = indexed_set(3);
  Rng rng(1);
  EXPECT_EQ(code_of([&] { sample_unsafe_images(s, 4, rng); }), ErrorCode::kCountExceedsSet);
  EXPECT_EQ(code_of([&] { sample_unsafe_images(s, 0, rng); }), ErrorCode::kCountExceedsSet);
}

TEST(ImageSet, FileFormat) {
  const auto dir = testing::scratch_dir("images");
  const auto s = indexed_set(4);
  write_file(dir / "i.txt", s.serialize());
  EXPECT_EQ(UnsafeImageSet::load(dir / "i.txt").items, s.items);
  write_file(dir / "bad.txt", "3\n1 2 3\n1 2\n");
  EXPECT_EQ(code_of([&] { UnsafeImageSet::load(dir / "bad.txt"); }), ErrorCode::kDimensionMismatch);
  write_file(dir / "empty.txt", "3\n");
  EXPECT_EQ(code_of([&] { UnsafeImageSet::load(dir / "empty.txt"); }), ErrorCode::kEmptyInput);
}

// ---------------------------------------------------------------------------
// Classifier
// ---------------------------------------------------------------------------

TEST(Classifier, Examples) {
  const AxisClassifier cls(unit_axis(5, 0));
  const auto on = classify_unsafe(cls, unit_axis(5, 0));
  EXPECT_DOUBLE_EQ(on.score, 1.0);
  EXPECT_TRUE(on.flagged);
  const auto off = classify_unsafe(cls, unit_axis(5, 3));
  EXPECT_DOUBLE_EQ(off.score, 0.0);
  EXPECT_FALSE(off.flagged);
  const auto neg = classify_unsafe(cls, {-1, 0, 0, 0, 0});
  EXPECT_DOUBLE_EQ(neg.score, 0.0);
}

TEST(Classifier, BoundaryIsInclusive) {
  // |(9,13,5,5,10)| = 20, so the cosine with e0 is exactly 9/20.
  const AxisClassifier cls(unit_axis(5, 0));
  const auto v = classify_unsafe(cls, {9, 13, 5, 5, 10});
  EXPECT_EQ(v.score, 0.45);
  EXPECT_TRUE(v.flagged);
  const auto below = classify_unsafe(cls, {8.99, 13, 5, 5, 10});
  EXPECT_FALSE(below.flagged);
}

TEST(Classifier, FlaggedIffScoreAtLeastThresholdProperty) {
  Rng rng(37);
  for (int trial = 0; trial < 1000; ++trial) {
    const double th = rng.uniform01();
    const AxisClassifier cls(unit_axis(4, 0), th);
    const auto v = cls.classify(testing::random_embedding(rng, 4));
    ASSERT_GE(v.score, 0.0);
    ASSERT_LE(v.score, 1.0);
    ASSERT_EQ(v.flagged, v.score >= th);
  }
}

TEST(Synthetic, ClusterIsSeededAndNearAxis) {
  const auto axis = unit_axis(64, 0);
  const auto a = synthetic_cluster(axis, 16, 0.1, 1);
  EXPECT_EQ(a, synthetic_cluster(axis, 16, 0.1, 1));
  for (const auto& e : a) EXPECT_GT(similarity(e, axis), 0.9);
  const UnsafeWordList w("v", {"blood", "gore"});
  const auto c = synthetic_concepts(axis, w, 0.1, 2);
  EXPECT_NE(c.embed_concept("blood"), c.embed_concept("gore"));
}

}  // namespace
}  // namespace advsuffix
