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

#include <cstdint>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "commands.hpp"

namespace cli = advsuffix::cli;

int main(int argc, char** argv) {
  CLI::App app{"advsuffix: black-box adversarial suffix search for red-teaming"};
  app.require_subcommand(1);

  cli::ScanVocabArgs scan;
  std::string scan_vocab, scan_words, scan_out;
  auto* sc = app.add_subcommand("scan-vocab", "Build the banned indicator set for a vocabulary");
  sc->add_option("--vocab", scan_vocab, "Vocabulary file, one token per line")->required();
  sc->add_option("--wordlist", scan_words, "Unsafe word list (default: built-in list)");
  sc->add_option("--concept", scan.concept_label, "Built-in list to use without --wordlist");
  sc->add_option("--th", scan.threshold, "Similarity threshold in (0, 1]");
  sc->add_option("--out", scan_out, "Output file")->required();

  cli::TrainArgs train;
  std::string train_config, train_dir;
  std::uint64_t train_seed = 0;
  auto* tr = app.add_subcommand("train", "Run a campaign and write a run directory");
  tr->add_option("--config", train_config, "Config file")->required();
  tr->add_option("--run-dir", train_dir, "Output run directory")->required();
  auto* tr_seed = tr->add_option("--seed", train_seed, "Override every seed in the config");
  tr->add_option("--jobs", train.jobs, "Worker threads for target queries");
  tr->add_flag("--resume", train.resume, "Continue from the run directory's checkpoints");
  tr->add_flag("--quiet", train.quiet, "No per-iteration progress on stderr");

  cli::GenerateArgs gen;
  std::string gen_config, gen_ckpt, gen_prompts, gen_out;
  std::uint64_t gen_seed = 0;
  auto* ge = app.add_subcommand("generate", "Decode adversarial suffixes for unseen prompts");
  ge->add_option("--config", gen_config, "Config file")->required();
  ge->add_option("--checkpoint", gen_ckpt, "Generator checkpoint (default: from config)");
  ge->add_option("--prompts", gen_prompts, "Prompt file (default: data.test)");
  ge->add_option("--out", gen_out, "Output file")->required();
  auto* ge_seed = ge->add_option("--seed", gen_seed, "Override every seed in the config");

  cli::EvalArgs ev;
  std::string ev_config, ev_prompts, ev_out;
  std::size_t ev_checks = 0;
  auto* eva = app.add_subcommand("eval", "Compute RSR, PPL and BR for a prompt file");
  eva->add_option("--config", ev_config, "Config file")->required();
  eva->add_option("--prompts", ev_prompts, "Prompt file (default: data.test)");
  eva->add_option("--out", ev_out, "Report path stem")->required();
  auto* ev_checks_opt = eva->add_option("--checks", ev_checks, "Generations per jailbreak check");
  eva->add_flag("--transfer", ev.transfer, "Evaluate the transfer matrix from the config");

  cli::FilterCheckArgs fc;
  std::string fc_config, fc_prompts, fc_out;
  auto* fch = app.add_subcommand("filter-check", "Run the configured prompt filters");
  fch->add_option("--config", fc_config, "Config file")->required();
  fch->add_option("--prompts", fc_prompts, "Prompt file")->required();
  fch->add_option("--out", fc_out, "Output file (default: stdout)");

  cli::ServeMockArgs sm;
  std::string sm_config;
  auto* ser = app.add_subcommand("serve-mock", "Serve the config's local models over HTTP");
  ser->add_option("--config", sm_config, "Config file")->required();
  ser->add_option("--host", sm.host, "Bind address");
  ser->add_option("--port", sm.port, "Port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cli::kInputError;
  }

  if (*sc) {
    scan.vocab = scan_vocab;
    scan.wordlist = scan_words;
    scan.out = scan_out;
    return cli::cmd_scan_vocab(scan);
  }
  if (*tr) {
    train.config = train_config;
    train.run_dir = train_dir;
    if (*tr_seed) train.seed = train_seed;
    return cli::cmd_train(train);
  }
  if (*ge) {
    gen.config = gen_config;
    gen.checkpoint = gen_ckpt;
    gen.prompts = gen_prompts;
    gen.out = gen_out;
    if (*ge_seed) gen.seed = gen_seed;
    return cli::cmd_generate(gen);
  }
  if (*eva) {
    ev.config = ev_config;
    ev.prompts = ev_prompts;
    ev.out = ev_out;
    if (*ev_checks_opt) ev.checks = ev_checks;
    return cli::cmd_eval(ev);
  }
  if (*fch) {
    fc.config = fc_config;
    fc.prompts = fc_prompts;
    fc.out = fc_out;
    return cli::cmd_filter_check(fc);
  }
  sm.config = sm_config;
  return cli::cmd_serve_mock(sm);
}
