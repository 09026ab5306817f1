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

// Command implementations behind the advsuffix binary. Each cmd_* returns a
// process exit code:
//   0  success
//   2  input or configuration error
//   3  domain invariant violated
//   4  backend failure

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "advsuffix/campaign.hpp"
#include "advsuffix/config.hpp"
#include "advsuffix/eval_report.hpp"
#include "advsuffix/wire_double.hpp"
#include "json.hpp"

namespace advsuffix::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kInputError = 2, kDomainError = 3, kBackendError = 4 };

inline int exit_code_for(const Error& e) {
  if (e.is_backend()) return kBackendError;
  switch (e.code()) {
    case ErrorCode::kIoFailure:
    case ErrorCode::kParseFailure:
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kEmptyInput:
    case ErrorCode::kVocabMismatch:
    case ErrorCode::kUnencodableText:
    case ErrorCode::kUnknownToken:
    case ErrorCode::kUnknownConcept:
    case ErrorCode::kLabelMismatch:
    case ErrorCode::kMergeRefused:
    case ErrorCode::kCountExceedsSet:
    case ErrorCode::kEmptyText:
    case ErrorCode::kEmptySequence:
      return kInputError;
    default:
      return kDomainError;
  }
}

template <class Fn>
int guarded(const char* command, Fn&& fn, std::ostream& err = std::cerr) {
  try {
    fn();
    return kOk;
  } catch (const Error& e) {
    err << "advsuffix " << command << ": " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const nlohmann::json::exception& e) {
    err << "advsuffix " << command << ": ParseFailure: " << e.what() << '\n';
    return kInputError;
  }
}

/// Non-empty lines of a prompt file; an empty result is an input error.
inline std::vector<std::string> load_prompts(const fs::path& path) {
  std::vector<std::string> out;
  for (auto& line : read_lines(path)) {
    if (!trim(line).empty()) out.push_back(std::move(line));
  }
  if (out.empty()) fail(ErrorCode::kEmptyInput, "no prompts in " + path.string());
  return out;
}

inline std::string file_digest(const fs::path& p) {
  return p.empty() ? std::string() : hex64(fnv1a64(read_file(p)));
}

inline nlohmann::json fixture_hashes(const Config& c) {
  nlohmann::json j = nlohmann::json::object();
  auto add = [&](const char* key, const fs::path& p) {
    if (!p.empty() && fs::exists(p)) j[key] = file_digest(p);
  };
  add("vocab", c.vocab);
  add("wordlist", c.wordlist);
  add("corpus", c.generator.corpus);
  add("generator_checkpoint", c.generator.checkpoint);
  add("train_prompts", c.train_prompts);
  add("test_prompts", c.test_prompts);
  add("images", c.images.file);
  add("concepts", c.concepts.file);
  return j;
}

inline nlohmann::json seeds_json(const Config& c) {
  return {{"campaign", c.campaign.seed},
          {"search", c.campaign.search.seed},
          {"target", c.campaign.search.target_seed},
          {"check", c.campaign.check_seed},
          {"decode", c.decode.seed}};
}

/// Digest of everything that determines a run's outputs.
inline std::string run_hash(const Config& c) {
  return hex64(fnv1a64(c.raw.dump() + seeds_json(c).dump() + fixture_hashes(c).dump()));
}

// ============================================================================
// scan-vocab
// ============================================================================

struct ScanVocabArgs {
  fs::path vocab;
  fs::path wordlist;
  std::string concept_label = "nudity";
  double threshold = 0.7;
  fs::path out;
};

inline int cmd_scan_vocab(const ScanVocabArgs& a) {
  return guarded("scan-vocab", [&] {
    const auto vocab = Vocabulary::load(a.vocab);
    const auto words = a.wordlist.empty() ? builtin_word_list(a.concept_label)
                                          : UnsafeWordList::load(a.wordlist, a.concept_label);
    if (words.empty()) fail(ErrorCode::kEmptyInput, "word list has no entries");
    const auto banned = build_banned_set(vocab, words, a.threshold);
    write_file(a.out, banned.serialize());
    std::cout << banned.size() << " banned ids written to " << a.out.string() << '\n';
  });
}

// ============================================================================
// train
// ============================================================================

struct TrainArgs {
  fs::path config;
  fs::path run_dir;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  bool resume = false;
  bool quiet = false;
};

struct RunLayout {
  fs::path dir;
  fs::path manifest() const { return dir / "manifest.json"; }
  fs::path generator() const { return dir / "generator.ngram"; }
  fs::path buffer() const { return dir / "buffer.json"; }
  fs::path log() const { return dir / "campaign.jsonl"; }
  fs::path banned() const { return dir / "banned.txt"; }

  nlohmann::json describe() const {
    return {{"manifest", "manifest.json"},
            {"generator_checkpoint", "generator.ngram"},
            {"buffer_checkpoint", "buffer.json"},
            {"campaign_log", "campaign.jsonl"},
            {"banned_set", "banned.txt"}};
  }
};

inline int cmd_train(const TrainArgs& a) {
  return guarded("train", [&] {
    Config cfg = load_config(a.config);
    if (a.seed) cfg.apply_seed(*a.seed);
    cfg.campaign.search.jobs = a.jobs;
    if (cfg.train_prompts.empty()) fail(ErrorCode::kInvalidConfig, "data.train is not set");
    const auto dataset = load_prompts(cfg.train_prompts);
    Environment env = build_environment(cfg);
    auto* model = dynamic_cast<CountNGramModel*>(env.generator.get());
    if (!model) fail(ErrorCode::kNotTrainable, "training needs a local n-gram generator");

    const RunLayout run{a.run_dir};
    const std::string hash = run_hash(cfg);
    CampaignState state{ReplayBuffer(cfg.campaign.buffer_capacity), 0};
    std::string log_text;
    if (a.resume && fs::exists(run.buffer())) {
      const auto ck = nlohmann::json::parse(read_file(run.buffer()));
      if (ck.at("run_hash").get<std::string>() != hash) {
        fail(ErrorCode::kInvalidConfig, "run directory was produced by a different config");
      }
      state.buffer = ReplayBuffer::from_json(ck.at("buffer"));
      state.next_iteration = ck.at("next_iteration").get<std::size_t>();
      *model = CountNGramModel::deserialize(read_file(run.generator()), env.vocab.hash());
      if (fs::exists(run.log())) log_text = read_file(run.log());
    }
    write_file(run.banned(), env.banned.serialize());

    const std::size_t total =
        cfg.campaign.iterations
            ? cfg.campaign.iterations
            : (dataset.size() + cfg.campaign.batch_size - 1) / cfg.campaign.batch_size;
    const std::size_t first = state.next_iteration;

    auto write_manifest = [&](const std::string& status, const std::string& error) {
      nlohmann::json m;
      m["tool"] = "advsuffix";
      m["command"] = "train";
      m["config"] = cfg.raw;
      m["config_hash"] = cfg.hash();
      m["run_hash"] = hash;
      m["seeds"] = seeds_json(cfg);
      m["fixtures"] = fixture_hashes(cfg);
      m["layout"] = run.describe();
      m["iterations_planned"] = total;
      m["next_iteration"] = state.next_iteration;
      m["status"] = status;
      if (!error.empty()) m["error"] = error;
      write_file(run.manifest(), m.dump(2) + "\n");
    };

    CampaignConfig step_cfg = cfg.campaign;
    step_cfg.iterations = 1;
    try {
      while (state.next_iteration < total) {
        const auto log = run_campaign(dataset, step_cfg, env.bindings(), state);
        const auto& rec = log.iterations.front();
        if (rec.searched() == 0 && !rec.outcomes.empty() && rec.outcomes.front().error_code) {
          // Nothing in the batch could be searched; treat as a hard failure.
          fail(*rec.outcomes.front().error_code, *rec.outcomes.front().error);
        }
        log_text += log.to_jsonl();
        write_file(run.log(), log_text);
        write_file(run.generator(), model->serialize());
        nlohmann::json ck;
        ck["run_hash"] = hash;
        ck["next_iteration"] = state.next_iteration;
        ck["buffer"] = state.buffer.to_json();
        write_file(run.buffer(), ck.dump() + "\n");
        if (!a.quiet) {
          std::cerr << "iteration " << rec.iteration << ": rsr_train=" << rec.rsr_train()
                    << " buffer=" << rec.buffer_size << '\n';
        }
      }
    } catch (const Error& e) {
      write_manifest("partial", e.what());
      throw;
    }
    if (first == total && !fs::exists(run.generator())) {
      write_file(run.generator(), model->serialize());
    }
    write_manifest("complete", "");
  });
}

// ============================================================================
// generate
// ============================================================================

struct GenerateArgs {
  fs::path config;
  fs::path checkpoint;  // empty: the config's generator
  fs::path prompts;     // empty: data.test
  fs::path out;
  std::optional<std::uint64_t> seed;
};

/// Decoded adversarial prompt for each input, in order.
inline std::vector<std::string> generate_prompts(const Config& cfg, const Environment& env,
                                                 const GeneratorModel& generator,
                                                 const std::vector<std::string>& prompts) {
  std::vector<std::string> out;
  out.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const TokenSeq x = prepare_prompt(prompts[i], cfg.campaign.truncate_tokens,
                                      cfg.campaign.prior_suffix, env.vocab);
    const DecodeMode mode = cfg.decode.mode == "sample"
                                ? DecodeMode::sample(derive_seed(cfg.decode.seed, i))
                                : DecodeMode::greedy();
    const TokenSeq s = decode_suffix(generator, x, cfg.decode_length(),
                                     cfg.decode.mask ? &env.banned : nullptr, mode, env.vocab);
    out.push_back(x.text + s.text);
  }
  return out;
}

inline int cmd_generate(const GenerateArgs& a) {
  return guarded("generate", [&] {
    Config cfg = load_config(a.config);
    if (a.seed) cfg.apply_seed(*a.seed);
    if (!a.checkpoint.empty()) {
      cfg.generator.kind = "ngram";
      cfg.generator.checkpoint = a.checkpoint;
    }
    const fs::path prompt_path = a.prompts.empty() ? cfg.test_prompts : a.prompts;
    if (prompt_path.empty()) fail(ErrorCode::kInvalidConfig, "no prompt file given");
    const auto prompts = load_prompts(prompt_path);
    const Environment env = build_environment(cfg);
    std::string text;
    for (const auto& line : generate_prompts(cfg, env, *env.generator, prompts)) {
      text += line;
      text += '\n';
    }
    write_file(a.out, text);
    nlohmann::json m;
    m["tool"] = "advsuffix";
    m["command"] = "generate";
    m["config"] = cfg.raw;
    m["config_hash"] = cfg.hash();
    m["seeds"] = seeds_json(cfg);
    m["fixtures"] = fixture_hashes(cfg);
    m["prompts"] = file_digest(prompt_path);
    m["output"] = a.out.filename().string();
    m["status"] = "complete";
    fs::path mpath = a.out;
    mpath += ".manifest.json";
    write_file(mpath, m.dump(2) + "\n");
  });
}

// ============================================================================
// eval
// ============================================================================

struct EvalArgs {
  fs::path config;
  fs::path prompts;  // empty: data.test
  fs::path out;      // report stem
  std::optional<std::size_t> checks;
  bool transfer = false;
};

inline int cmd_eval(const EvalArgs& a) {
  return guarded("eval", [&] {
    Config cfg = load_config(a.config);
    const std::size_t checks = a.checks ? *a.checks : cfg.eval_checks;
    const Environment env = build_environment(cfg);

    if (a.transfer) {
      if (cfg.transfer.empty()) fail(ErrorCode::kInvalidConfig, "no transfer section");
      std::map<std::string, std::vector<std::string>> sets;
      std::vector<std::unique_ptr<TargetModel>> targets;
      std::vector<std::unique_ptr<UnsafeClassifier>> classifiers;
      std::map<std::string, TransferTarget> bound;
      for (const auto& [label, spec] : cfg.transfer) {
        targets.push_back(make_target(spec.target));
        classifiers.push_back(make_classifier(spec.classifier, spec.target.dimension));
        bound[label] = TransferTarget{targets.back().get(), classifiers.back().get()};
        // Only prompts that break their own target take part.
        const auto all = load_prompts(spec.prompts);
        sets[label] = filter_successes(all, bound[label], checks, cfg.eval_check_seed);
        if (sets[label].empty()) {
          fail(ErrorCode::kEmptyInput, "no prompt in " + spec.prompts.string() +
                                           " jailbreaks target '" + label + "'");
        }
        std::cerr << "transfer: " << label << " keeps " << sets[label].size() << " of "
                  << all.size() << " prompts\n";
      }
      const auto m = transfer_matrix(sets, bound, checks, cfg.eval_check_seed);
      fs::path csv = a.out;
      csv += ".transfer.csv";
      write_file(csv, m.to_csv());
      std::cout << m.to_csv();
      return;
    }

    const fs::path prompt_path = a.prompts.empty() ? cfg.test_prompts : a.prompts;
    if (prompt_path.empty()) fail(ErrorCode::kInvalidConfig, "no prompt file given");
    const auto prompts = load_prompts(prompt_path);
    const FilterStack filters = env.filters();
    std::vector<EvalRecord> records;
    records.reserve(prompts.size());
    for (const auto& p : prompts) {
      records.push_back(evaluate_prompt(p, filters, *env.target, *env.classifier, *env.aux,
                                        env.vocab, checks, cfg.eval_check_seed));
    }
    const auto report = summarize(records, cfg.hash());
    emit_report(report, records, a.out);
    std::cout << report_table(report, records);
  });
}

// ============================================================================
// filter-check
// ============================================================================

struct FilterCheckArgs {
  fs::path config;
  fs::path prompts;
  fs::path out;  // empty: stdout
};

/// "clean" or the blocking reasons joined by "; ".
inline std::string verdict_line(const std::vector<FilterVerdict>& verdicts) {
  std::string out;
  for (const auto& v : verdicts) {
    if (!v.blocked) continue;
    if (!out.empty()) out += "; ";
    out += v.reason_string();
  }
  return out.empty() ? "clean" : out;
}

inline int cmd_filter_check(const FilterCheckArgs& a) {
  return guarded("filter-check", [&] {
    const Config cfg = load_config(a.config);
    if (cfg.filters.empty()) fail(ErrorCode::kInvalidConfig, "no filters configured");
    const auto prompts = load_prompts(a.prompts);
    const Environment env = build_environment(cfg);
    const FilterStack stack = env.filters();
    std::string text;
    for (const auto& p : prompts) {
      text += verdict_line(stack.evaluate(p));
      text += '\t';
      text += p;
      text += '\n';
    }
    if (a.out.empty()) {
      std::cout << text;
    } else {
      write_file(a.out, text);
    }
  });
}

// ============================================================================
// serve-mock
// ============================================================================

struct ServeMockArgs {
  fs::path config;
  std::string host = "127.0.0.1";
  int port = 8080;
};

/// Serves the config's auxiliary model, target and classifier over the wire
/// protocol until killed.
inline int cmd_serve_mock(const ServeMockArgs& a) {
  return guarded("serve-mock", [&] {
    const Config cfg = load_config(a.config);
    const Environment env = build_environment(cfg);
    remote::LoopbackServer server(env.aux.get(), env.target.get(), env.classifier.get());
    std::cerr << "serving on http://" << a.host << ':' << a.port << '\n';
    server.serve_forever(a.host, a.port);
  });
}

}  // namespace advsuffix::cli
