// Copyright 2026 The Polfuse Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// polfuse command-line front end. The exit code is the library status code.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "polfuse/polfuse.h"

namespace {

struct Options {
  std::vector<std::string> configs;
  std::string task;
  std::string channels;
  std::string seed;
  std::string out;
  bool quiet = false;
};

void PrintWarning(const char* message, void*) { std::fprintf(stderr, "warning: %s\n", message); }
void PrintInfo(const char* message, void*) { std::fprintf(stderr, "%s\n", message); }

int Fail(polfuse_status status) {
  std::fprintf(stderr, "error (%s): %s\n", polfuse_status_name(status), polfuse_last_error());
  return status;
}

polfuse_status Open(const std::string& path, const Options& o, polfuse_experiment** e) {
  polfuse_status s = polfuse_experiment_open(path.c_str(), e);
  if (s != POLFUSE_OK) return s;
  const std::pair<const char*, const std::string*> overrides[] = {
      {"task", &o.task}, {"channels", &o.channels}, {"seed", &o.seed}};
  for (const auto& [key, value] : overrides) {
    if (value->empty()) continue;
    s = polfuse_experiment_set(*e, key, value->c_str());
    if (s != POLFUSE_OK) return s;
  }
  return POLFUSE_OK;
}

int RunCommand(const std::string& command, const Options& o) {
  polfuse_experiment* e = nullptr;
  polfuse_status s = Open(o.configs.front(), o, &e);
  if (s == POLFUSE_OK && !o.out.empty()) s = polfuse_experiment_set(e, "out", o.out.c_str());
  if (s == POLFUSE_OK) s = polfuse_experiment_run(e, command.c_str());
  const int rc = s == POLFUSE_OK ? 0 : Fail(s);
  polfuse_experiment_free(e);
  return rc;
}

int RunCompare(const Options& o) {
  std::vector<polfuse_experiment*> list;
  polfuse_status s = POLFUSE_OK;
  for (const auto& path : o.configs) {
    polfuse_experiment* e = nullptr;
    s = Open(path, o, &e);
    if (e) list.push_back(e);
    // With one config, --out is also that experiment's run directory.
    if (s == POLFUSE_OK && o.configs.size() == 1 && !o.out.empty()) s = polfuse_experiment_set(e, "out", o.out.c_str());
    if (s != POLFUSE_OK) break;
  }
  if (s == POLFUSE_OK) {
    const std::string out = o.out.empty() ? polfuse_experiment_output_dir(list.front()) : o.out;
    s = polfuse_compare(list.data(), list.size(), out.c_str());
  }
  const int rc = s == POLFUSE_OK ? 0 : Fail(s);
  for (auto* e : list) polfuse_experiment_free(e);
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Political leaning and stance classification with feature fusion"};
  app.set_version_flag("--version", std::string(polfuse_version()));
  app.require_subcommand(1);

  Options o;
  auto add_common = [&](CLI::App* sub, bool many) {
    auto* c = sub->add_option("-c,--config", o.configs, many ? "Experiment config (repeatable)" : "Experiment config")
                  ->required()
                  ->check(CLI::ExistingFile);
    if (!many) c->expected(1);
    sub->add_option("--task", o.task, "Override the task (T1, T2-binary, T2-ternary, T3, T4-binary, T4-ternary, T5)");
    sub->add_option("--channels", o.channels, "Run a single variant, e.g. bert+sngram or reference");
    sub->add_option("--seed", o.seed, "Override the seed");
    sub->add_option("--out", o.out, many ? "Comparison output directory (with one config: its run directory)" : "Override the output directory");
    sub->add_flag("-q,--quiet", o.quiet, "Only print warnings and errors");
  };

  const char* commands[][2] = {
      {"build-corpus", "Label, filter and split a raw corpus"},
      {"extract-features", "Syntactic bigrams, psycholinguistic profiles, selection and embeddings"},
      {"train", "Train every configured variant"},
      {"evaluate", "Test-set metrics and predictions"},
      {"explain", "Permutation importance of the engineered features"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    subs.push_back(app.add_subcommand(name, help));
    add_common(subs.back(), false);
  }
  CLI::App* compare = app.add_subcommand("compare", "Homogeneous groups over evaluated models");
  add_common(compare, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : POLFUSE_ERR_INVALID_ARGUMENT;
  }

  polfuse_set_warning_handler(PrintWarning, nullptr);
  if (!o.quiet) polfuse_set_info_handler(PrintInfo, nullptr);

  if (compare->parsed()) return RunCompare(o);
  for (CLI::App* sub : subs) {
    if (sub->parsed()) return RunCommand(sub->get_name(), o);
  }
  return POLFUSE_ERR_INVALID_ARGUMENT;
}
