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
 * Run configuration
 *
 * A single JSON document with one section per module. Relative paths are
 * resolved against the directory holding the config file. Unknown keys are
 * rejected so that typos fail loudly instead of silently using a default.
 * See README.md for the full schema and the defaults.
 *
 * build_environment() turns a parsed config into live objects: vocabulary,
 * banned set, generator, auxiliary model, target, classifier, unsafe image
 * set and concept embeddings. Remote bindings are only ever created from an
 * explicit endpoint section.
 */

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "advsuffix/campaign.hpp"
#include "advsuffix/error.hpp"
#include "advsuffix/evasion.hpp"
#include "advsuffix/models.hpp"
#include "advsuffix/remote.hpp"
#include "advsuffix/target_oracle.hpp"
#include "advsuffix/token_space.hpp"
#include "advsuffix/util.hpp"
#include "json.hpp"

namespace advsuffix {

namespace fs = std::filesystem;
using nlohmann::json;

struct GeneratorSpec {
  std::string kind = "ngram";  // ngram | remote
  fs::path corpus;
  int order = 2;
  double alpha = 1.0;
  fs::path checkpoint;
  remote::EndpointConfig endpoint;
};

struct AuxSpec {
  std::string kind = "corpus";  // corpus | uniform | remote
  remote::EndpointConfig endpoint;
};

struct TargetSpec {
  std::string kind = "hashing-mock";  // hashing-mock | remote
  HashingMockConfig mock;
  std::size_t dimension = 64;
  remote::EndpointConfig endpoint;
};

struct ClassifierSpec {
  std::string kind = "axis";  // axis | remote
  std::size_t axis = 0;
  double threshold = AxisClassifier::kDefaultThreshold;
  remote::EndpointConfig endpoint;
};

struct EmbeddingSetSpec {
  std::string kind = "synthetic";  // synthetic | file
  std::size_t count = 16;
  double spread = 0.1;
  std::uint64_t seed = 1;
  fs::path file;
};

struct DecodeSpec {
  std::string mode = "greedy";  // greedy | sample
  std::uint64_t seed = 0;
  std::optional<std::size_t> length;  // defaults to search.T
  bool mask = true;
};

struct FilterConfig {
  std::string kind;  // blacklist | perplexity
  MatchMode match = MatchMode::kSubstring;
  fs::path wordlist;  // blacklist only; defaults to the concept list
  double limit = 0.0;
};

struct TransferSpec {
  TargetSpec target;
  ClassifierSpec classifier;
  fs::path prompts;
};

struct Config {
  fs::path base_dir;
  json raw;

  fs::path vocab;
  std::string concept_label = "violence";
  fs::path wordlist;  // empty: built-in list for concept_label
  double banned_threshold = 0.7;
  PenaltyPolicy policy;

  GeneratorSpec generator;
  AuxSpec aux;
  TargetSpec target;
  ClassifierSpec classifier;
  EmbeddingSetSpec images;
  EmbeddingSetSpec concepts;

  CampaignConfig campaign;
  DecodeSpec decode;
  fs::path train_prompts;
  fs::path test_prompts;
  std::vector<FilterConfig> filters;
  std::size_t eval_checks = 3;
  std::uint64_t eval_check_seed = 1000;
  std::map<std::string, TransferSpec> transfer;

  std::size_t decode_length() const { return decode.length ? *decode.length : campaign.search.T; }

  /// Stable digest of the document as written; equal configs hash equal.
  std::string hash() const { return hex64(fnv1a64(raw.dump())); }

  /// Overrides every seed knob from a single operator seed.
  void apply_seed(std::uint64_t seed) {
    campaign.seed = seed;
    campaign.search.seed = seed;
    decode.seed = seed;
  }
};

namespace config_detail {

[[noreturn]] inline void bad(const std::string& where, const std::string& what) {
  fail(ErrorCode::kInvalidConfig, where + ": " + what);
}

inline void check_keys(const json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) bad(where, "expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) bad(where, "unknown key '" + k + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key) || j[key].is_null()) return;
  try {
    out = j[key].get<T>();
  } catch (const json::exception& e) {
    bad(where + "." + key, e.what());
  }
}

inline void read_path(const json& j, const char* key, fs::path& out, const fs::path& base,
                      const std::string& where) {
  std::string s;
  read(j, key, s, where);
  if (!s.empty()) out = fs::path(s).is_absolute() ? fs::path(s) : base / s;
}

inline remote::EndpointConfig parse_endpoint(const json& j, const std::string& where) {
  check_keys(j, where,
             {"base_url", "routes", "timeout_ms", "max_in_flight", "retries", "backoff_ms",
              "auth_env"});
  remote::EndpointConfig e;
  read(j, "base_url", e.base_url, where);
  read(j, "routes", e.routes, where);
  read(j, "timeout_ms", e.timeout_ms, where);
  read(j, "max_in_flight", e.max_in_flight, where);
  read(j, "retries", e.retries, where);
  read(j, "backoff_ms", e.backoff_ms, where);
  read(j, "auth_env", e.auth_env, where);
  if (!j.contains("base_url")) bad(where, "remote binding needs base_url");
  try {
    e.validate();
  } catch (const Error& err) {
    bad(where, err.what());
  }
  return e;
}

inline TargetSpec parse_target(const json& j, const std::string& where) {
  check_keys(j, where, {"kind", "dimension", "hash_seed", "noise", "triggers", "endpoint"});
  TargetSpec t;
  read(j, "kind", t.kind, where);
  read(j, "dimension", t.dimension, where);
  if (t.kind == "hashing-mock") {
    t.mock.dimension = t.dimension;
    read(j, "hash_seed", t.mock.hash_seed, where);
    read(j, "noise", t.mock.noise, where);
    read(j, "triggers", t.mock.triggers, where);
  } else if (t.kind == "remote") {
    if (!j.contains("endpoint")) bad(where, "remote target needs an endpoint");
    t.endpoint = parse_endpoint(j["endpoint"], where + ".endpoint");
  } else {
    bad(where, "unknown target kind '" + t.kind + "'");
  }
  return t;
}

inline ClassifierSpec parse_classifier(const json& j, const std::string& where) {
  check_keys(j, where, {"kind", "axis", "threshold", "endpoint"});
  ClassifierSpec c;
  read(j, "kind", c.kind, where);
  read(j, "axis", c.axis, where);
  read(j, "threshold", c.threshold, where);
  if (c.kind == "remote") {
    if (!j.contains("endpoint")) bad(where, "remote classifier needs an endpoint");
    c.endpoint = parse_endpoint(j["endpoint"], where + ".endpoint");
  } else if (c.kind != "axis") {
    bad(where, "unknown classifier kind '" + c.kind + "'");
  }
  return c;
}

inline EmbeddingSetSpec parse_embedding_set(const json& j, const fs::path& base,
                                            const std::string& where) {
  check_keys(j, where, {"kind", "count", "spread", "seed", "file"});
  EmbeddingSetSpec s;
  read(j, "kind", s.kind, where);
  read(j, "count", s.count, where);
  read(j, "spread", s.spread, where);
  read(j, "seed", s.seed, where);
  read_path(j, "file", s.file, base, where);
  if (s.kind == "file" && s.file.empty()) bad(where, "file kind needs 'file'");
  if (s.kind != "file" && s.kind != "synthetic") bad(where, "unknown kind '" + s.kind + "'");
  return s;
}

inline PenaltyPolicy parse_penalty(const json& j) {
  const std::string where = "penalty";
  check_keys(j, where, {"primary", "factor", "secondary", "secondary_penalty"});
  PenaltyPolicy p;
  std::string primary = "hard-mask";
  read(j, "primary", primary, where);
  if (primary == "hard-mask") {
    p.primary = PenaltyPolicy::Primary::kHardMask;
  } else if (primary == "multiplicative") {
    p.primary = PenaltyPolicy::Primary::kMultiplicative;
  } else if (primary == "none") {
    p.primary = PenaltyPolicy::Primary::kNone;
  } else {
    bad(where, "unknown primary mode '" + primary + "'");
  }
  read(j, "factor", p.factor, where);
  read(j, "secondary", p.secondary_enabled, where);
  read(j, "secondary_penalty", p.secondary_penalty, where);
  return p;
}

inline SearchConfig parse_search(const json& j) {
  const std::string where = "search";
  check_keys(j, where, {"T", "k", "b", "lambda", "sampling", "seed", "target_seed"});
  SearchConfig s;
  read(j, "T", s.T, where);
  read(j, "k", s.k, where);
  read(j, "b", s.b, where);
  read(j, "lambda", s.lambda, where);
  read(j, "seed", s.seed, where);
  read(j, "target_seed", s.target_seed, where);
  std::string sampling = "multinomial";
  read(j, "sampling", sampling, where);
  if (sampling == "multinomial") {
    s.sampling = SamplingMethod::kMultinomial;
  } else if (sampling == "gumbel-top-k") {
    s.sampling = SamplingMethod::kGumbelTopK;
  } else {
    bad(where, "unknown sampling '" + sampling + "'");
  }
  return s;
}

inline void parse_campaign(const json& j, CampaignConfig& c) {
  const std::string where = "campaign";
  check_keys(j, where,
             {"batch_size", "prior_suffix", "truncate_tokens", "fine_tune_samples", "epochs",
              "priority_temperature", "checks", "check_seed", "iterations", "images_per_batch",
              "seed", "buffer_capacity"});
  read(j, "batch_size", c.batch_size, where);
  read(j, "prior_suffix", c.prior_suffix, where);
  read(j, "truncate_tokens", c.truncate_tokens, where);
  read(j, "fine_tune_samples", c.fine_tune_samples, where);
  read(j, "epochs", c.epochs, where);
  read(j, "priority_temperature", c.priority_temperature, where);
  read(j, "checks", c.checks, where);
  read(j, "check_seed", c.check_seed, where);
  read(j, "iterations", c.iterations, where);
  read(j, "images_per_batch", c.images_per_batch, where);
  read(j, "seed", c.seed, where);
  read(j, "buffer_capacity", c.buffer_capacity, where);
}

}  // namespace config_detail

/// Parses a config document; `base_dir` anchors relative paths.
inline Config parse_config(const json& j, const fs::path& base_dir) {
  using namespace config_detail;
  check_keys(j, "config",
             {"vocab", "concept", "wordlist", "banned_threshold", "penalty", "generator", "aux",
              "target", "classifier", "images", "concepts", "search", "campaign", "decode",
              "data", "filters", "eval", "transfer"});
  Config c;
  c.base_dir = base_dir;
  c.raw = j;
  read_path(j, "vocab", c.vocab, base_dir, "config");
  if (c.vocab.empty()) bad("config", "missing 'vocab'");
  read(j, "concept", c.concept_label, "config");
  read_path(j, "wordlist", c.wordlist, base_dir, "config");
  read(j, "banned_threshold", c.banned_threshold, "config");
  if (j.contains("penalty")) c.policy = parse_penalty(j["penalty"]);

  if (j.contains("generator")) {
    const auto& g = j["generator"];
    check_keys(g, "generator", {"kind", "corpus", "order", "alpha", "checkpoint", "endpoint"});
    read(g, "kind", c.generator.kind, "generator");
    read_path(g, "corpus", c.generator.corpus, base_dir, "generator");
    read(g, "order", c.generator.order, "generator");
    read(g, "alpha", c.generator.alpha, "generator");
    read_path(g, "checkpoint", c.generator.checkpoint, base_dir, "generator");
    if (c.generator.kind == "remote") {
      if (!g.contains("endpoint")) bad("generator", "remote generator needs an endpoint");
      c.generator.endpoint = parse_endpoint(g["endpoint"], "generator.endpoint");
    } else if (c.generator.kind != "ngram") {
      bad("generator", "unknown kind '" + c.generator.kind + "'");
    }
  }
  if (j.contains("aux")) {
    const auto& a = j["aux"];
    check_keys(a, "aux", {"kind", "endpoint"});
    read(a, "kind", c.aux.kind, "aux");
    if (c.aux.kind == "remote") {
      if (!a.contains("endpoint")) bad("aux", "remote aux needs an endpoint");
      c.aux.endpoint = parse_endpoint(a["endpoint"], "aux.endpoint");
    } else if (c.aux.kind != "corpus" && c.aux.kind != "uniform") {
      bad("aux", "unknown kind '" + c.aux.kind + "'");
    }
  }
  if (!j.contains("target")) bad("config", "missing 'target' binding");
  c.target = parse_target(j["target"], "target");
  if (!j.contains("classifier")) bad("config", "missing 'classifier' binding");
  c.classifier = parse_classifier(j["classifier"], "classifier");
  if (j.contains("images")) c.images = parse_embedding_set(j["images"], base_dir, "images");
  if (j.contains("concepts")) {
    c.concepts = parse_embedding_set(j["concepts"], base_dir, "concepts");
  } else {
    c.concepts.seed = 2;
  }

  if (j.contains("search")) c.campaign.search = parse_search(j["search"]);
  if (j.contains("campaign")) parse_campaign(j["campaign"], c.campaign);

  if (j.contains("decode")) {
    const auto& d = j["decode"];
    check_keys(d, "decode", {"mode", "seed", "length", "mask"});
    read(d, "mode", c.decode.mode, "decode");
    read(d, "seed", c.decode.seed, "decode");
    if (d.contains("length") && !d["length"].is_null()) {
      std::size_t len = 0;
      read(d, "length", len, "decode");
      c.decode.length = len;
    }
    read(d, "mask", c.decode.mask, "decode");
    if (c.decode.mode != "greedy" && c.decode.mode != "sample") {
      bad("decode", "unknown mode '" + c.decode.mode + "'");
    }
  }
  if (j.contains("data")) {
    check_keys(j["data"], "data", {"train", "test"});
    read_path(j["data"], "train", c.train_prompts, base_dir, "data");
    read_path(j["data"], "test", c.test_prompts, base_dir, "data");
  }
  if (j.contains("filters")) {
    if (!j["filters"].is_array()) bad("filters", "expected an array");
    for (const auto& f : j["filters"]) {
      check_keys(f, "filters[]", {"kind", "match", "wordlist", "limit"});
      FilterConfig fc;
      read(f, "kind", fc.kind, "filters[]");
      std::string match = "substring";
      read(f, "match", match, "filters[]");
      if (match == "word-boundary") {
        fc.match = MatchMode::kWordBoundary;
      } else if (match != "substring") {
        bad("filters[]", "unknown match mode '" + match + "'");
      }
      read_path(f, "wordlist", fc.wordlist, base_dir, "filters[]");
      read(f, "limit", fc.limit, "filters[]");
      if (fc.kind == "perplexity" && !(fc.limit > 1.0)) {
        bad("filters[]", "perplexity limit must be > 1");
      }
      if (fc.kind != "blacklist" && fc.kind != "perplexity") {
        bad("filters[]", "unknown kind '" + fc.kind + "'");
      }
      c.filters.push_back(std::move(fc));
    }
  }
  if (j.contains("eval")) {
    check_keys(j["eval"], "eval", {"checks", "check_seed"});
    read(j["eval"], "checks", c.eval_checks, "eval");
    read(j["eval"], "check_seed", c.eval_check_seed, "eval");
  }
  if (j.contains("transfer")) {
    if (!j["transfer"].is_object()) bad("transfer", "expected an object");
    for (const auto& [label, t] : j["transfer"].items()) {
      const std::string where = "transfer." + label;
      check_keys(t, where, {"target", "classifier", "prompts"});
      TransferSpec ts;
      if (!t.contains("target") || !t.contains("classifier")) {
        bad(where, "needs target and classifier");
      }
      ts.target = parse_target(t["target"], where + ".target");
      ts.classifier = parse_classifier(t["classifier"], where + ".classifier");
      read_path(t, "prompts", ts.prompts, base_dir, where);
      c.transfer.emplace(label, std::move(ts));
    }
  }
  return c;
}

inline Config load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::kParseFailure, path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

// ============================================================================
// Environment
// ============================================================================

inline std::unique_ptr<TargetModel> make_target(const TargetSpec& t) {
  if (t.kind == "remote") return std::make_unique<remote::RemoteTarget>(t.endpoint, t.dimension);
  return std::make_unique<HashingMockTarget>(t.mock);
}

inline std::unique_ptr<UnsafeClassifier> make_classifier(const ClassifierSpec& c,
                                                         std::size_t dimension) {
  if (c.kind == "remote") return std::make_unique<remote::RemoteClassifier>(c.endpoint);
  if (c.axis >= dimension) {
    fail(ErrorCode::kInvalidConfig, "classifier axis outside the target dimension");
  }
  return std::make_unique<AxisClassifier>(unit_axis(dimension, c.axis), c.threshold);
}

/// Live objects for one run. Owns everything the bindings point at, so it
/// must outlive any CampaignBindings or SearchProblem taken from it.
struct Environment {
  Vocabulary vocab;
  UnsafeWordList words;
  BannedIndicatorSet banned;
  std::unique_ptr<GeneratorModel> generator;
  std::unique_ptr<GeneratorModel> aux;
  std::unique_ptr<TargetModel> target;
  std::unique_ptr<UnsafeClassifier> classifier;
  UnsafeImageSet images;
  std::vector<Embedding> concept_embeddings;
  PenaltyPolicy policy;
  std::vector<FilterSpec> filter_specs;

  CampaignBindings bindings() const {
    CampaignBindings b;
    b.vocab = &vocab;
    b.generator = generator.get();
    b.aux = aux.get();
    b.target = target.get();
    b.classifier = classifier.get();
    b.images = &images;
    b.words = &words;
    b.banned = &banned;
    b.concept_embeddings = concept_embeddings;
    b.policy = policy;
    return b;
  }

  FilterStack filters() const { return FilterStack(&vocab, filter_specs); }
};

inline UnsafeWordList load_words(const Config& c) {
  auto w = c.wordlist.empty() ? builtin_word_list(c.concept_label)
                              : UnsafeWordList::load(c.wordlist, c.concept_label);
  if (w.empty()) fail(ErrorCode::kEmptyInput, "unsafe word list is empty");
  return w;
}

/// The unsafe direction synthetic fixtures cluster around: the classifier
/// axis when the classifier is local, else the target's first axis.
inline Embedding unsafe_direction(const Config& c) {
  const std::size_t axis = c.classifier.kind == "axis" ? c.classifier.axis : 0;
  return unit_axis(c.target.dimension, axis);
}

inline Environment build_environment(const Config& c) {
  Environment env;
  env.vocab = Vocabulary::load(c.vocab);
  env.words = load_words(c);
  env.banned = build_banned_set(env.vocab, env.words, c.banned_threshold);
  env.policy = c.policy;
  env.policy.validate();

  std::optional<CountNGramModel> base;
  if (!c.generator.corpus.empty()) {
    base = train_ngram(env.vocab, read_lines(c.generator.corpus), c.generator.order,
                       c.generator.alpha);
  }
  if (c.generator.kind == "remote") {
    env.generator = std::make_unique<remote::RemoteGenerator>(c.generator.endpoint, env.vocab.size());
  } else if (!c.generator.checkpoint.empty()) {
    env.generator = std::make_unique<CountNGramModel>(
        CountNGramModel::deserialize(read_file(c.generator.checkpoint), env.vocab.hash()));
  } else if (base) {
    env.generator = std::make_unique<CountNGramModel>(*base);
  } else {
    env.generator = std::make_unique<CountNGramModel>(env.vocab.size(), c.generator.order,
                                                      c.generator.alpha, env.vocab.hash());
  }

  if (c.aux.kind == "remote") {
    env.aux = std::make_unique<remote::RemoteGenerator>(c.aux.endpoint, env.vocab.size());
  } else if (c.aux.kind == "uniform" || !base) {
    env.aux = std::make_unique<CountNGramModel>(env.vocab.size(), 1, 1.0, env.vocab.hash());
  } else {
    env.aux = std::make_unique<CountNGramModel>(*base);
  }

  env.target = make_target(c.target);
  env.classifier = make_classifier(c.classifier, c.target.dimension);

  const Embedding axis = unsafe_direction(c);
  if (c.images.kind == "file") {
    env.images = UnsafeImageSet::load(c.images.file);
  } else {
    env.images.items = synthetic_cluster(axis, c.images.count, c.images.spread, c.images.seed);
  }
  if (env.images.items.empty()) fail(ErrorCode::kEmptyInput, "unsafe image set is empty");
  if (c.concepts.kind == "file") {
    env.concept_embeddings = embed_concepts(ConceptTable::load(c.concepts.file), env.words);
  } else {
    env.concept_embeddings =
        embed_concepts(synthetic_concepts(axis, env.words, c.concepts.spread, c.concepts.seed),
                       env.words);
  }

  for (const auto& f : c.filters) {
    if (f.kind == "blacklist") {
      BlacklistFilterSpec b;
      b.words = f.wordlist.empty() ? env.words : UnsafeWordList::load(f.wordlist);
      b.mode = f.match;
      env.filter_specs.emplace_back(std::move(b));
    } else {
      env.filter_specs.emplace_back(PerplexityFilterSpec{env.aux.get(), f.limit});
    }
  }
  return env;
}

}  // namespace advsuffix
