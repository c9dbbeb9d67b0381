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

#include "polfuse/polfuse.h"

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include "polfuse/corpus.hpp"
#include "polfuse/evaluation.hpp"
#include "polfuse/pipeline.hpp"

#ifndef POLFUSE_VERSION
#define POLFUSE_VERSION "0.0.0"
#endif

struct polfuse_experiment {
  std::filesystem::path config_path;
  polfuse::ConfigOverrides overrides;
  std::unique_ptr<polfuse::Experiment> experiment;
  std::string output_dir;
};

struct polfuse_dataset {
  polfuse::LabeledDataset dataset;
};

namespace {

thread_local std::string g_last_error;

polfuse_status StatusOf(polfuse::ErrorKind kind) {
  switch (kind) {
    case polfuse::ErrorKind::kInvalidArgument: return POLFUSE_ERR_INVALID_ARGUMENT;
    case polfuse::ErrorKind::kConfig: return POLFUSE_ERR_CONFIG;
    case polfuse::ErrorKind::kData: return POLFUSE_ERR_DATA;
    case polfuse::ErrorKind::kCapability: return POLFUSE_ERR_CAPABILITY;
    case polfuse::ErrorKind::kNumerical: return POLFUSE_ERR_NUMERICAL;
  }
  return POLFUSE_ERR_INTERNAL;
}

template <typename F>
polfuse_status Guard(F&& f) {
  try {
    f();
    return POLFUSE_OK;
  } catch (const polfuse::Error& e) {
    g_last_error = e.what();
    return StatusOf(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return POLFUSE_ERR_INTERNAL;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return POLFUSE_ERR_DATA;
  } catch (const std::exception& e) {
    g_last_error = std::string("internal error: ") + e.what();
    return POLFUSE_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "internal error: unknown exception";
    return POLFUSE_ERR_INTERNAL;
  }
}

void Require(bool cond, const char* what) {
  if (!cond) throw polfuse::InvalidArgument(what);
}

void Reload(polfuse_experiment* e) {
  auto config = polfuse::LoadConfig(e->config_path, e->overrides);
  e->output_dir = config.output_dir.string();
  e->experiment = std::make_unique<polfuse::Experiment>(std::move(config));
}

polfuse::PairedPredictions Paired(const int* gold, const int* a, const int* b, std::size_t n, int classes) {
  Require(gold && a && b, "null label array");
  polfuse::PairedPredictions p;
  p.gold.assign(gold, gold + n);
  p.a.assign(a, a + n);
  p.b.assign(b, b + n);
  p.num_classes = classes;
  return p;
}

}  // namespace

extern "C" {

const char* polfuse_version(void) { return POLFUSE_VERSION; }

const char* polfuse_status_name(int status) {
  switch (status) {
    case POLFUSE_OK: return "ok";
    case POLFUSE_ERR_INTERNAL: return "internal";
    case POLFUSE_ERR_CONFIG: return "config";
    case POLFUSE_ERR_DATA: return "data";
    case POLFUSE_ERR_CAPABILITY: return "capability";
    case POLFUSE_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case POLFUSE_ERR_NUMERICAL: return "numerical";
    default: return "unknown";
  }
}

const char* polfuse_last_error(void) { return g_last_error.c_str(); }

void polfuse_set_warning_handler(polfuse_message_fn fn, void* user_data) {
  if (!fn) {
    polfuse::SetWarningSink(nullptr);
    return;
  }
  polfuse::SetWarningSink([fn, user_data](std::string_view m) { fn(std::string(m).c_str(), user_data); });
}

void polfuse_set_info_handler(polfuse_message_fn fn, void* user_data) {
  if (!fn) {
    polfuse::SetInfoSink(nullptr);
    return;
  }
  polfuse::SetInfoSink([fn, user_data](std::string_view m) { fn(std::string(m).c_str(), user_data); });
}

polfuse_status polfuse_experiment_open(const char* config_path, polfuse_experiment** out) {
  return Guard([&] {
    Require(config_path && out, "null argument");
    *out = nullptr;
    auto e = std::make_unique<polfuse_experiment>();
    e->config_path = config_path;
    Reload(e.get());
    *out = e.release();
  });
}

polfuse_status polfuse_experiment_set(polfuse_experiment* e, const char* key, const char* value) {
  return Guard([&] {
    Require(e && key && value, "null argument");
    const std::string k = key;
    polfuse::ConfigOverrides saved = e->overrides;
    if (k == "task") {
      e->overrides.task = value;
    } else if (k == "channels") {
      e->overrides.channels = value;
    } else if (k == "seed") {
      char* end = nullptr;
      errno = 0;
      const unsigned long long s = std::strtoull(value, &end, 10);
      if (errno != 0 || end == value || *end != '\0' || value[0] == '-') {
        throw polfuse::InvalidArgument(std::string("seed must be a non-negative integer, got '") + value + "'");
      }
      e->overrides.seed = s;
    } else if (k == "out") {
      e->overrides.output_dir = std::filesystem::path(value);
    } else {
      throw polfuse::InvalidArgument("unknown experiment key '" + k + "' (task, channels, seed, out)");
    }
    try {
      Reload(e);
    } catch (...) {
      e->overrides = saved;
      throw;
    }
  });
}

polfuse_status polfuse_experiment_run(polfuse_experiment* e, const char* command) {
  return Guard([&] {
    Require(e && command, "null argument");
    e->experiment->Run(command);
  });
}

const char* polfuse_experiment_output_dir(const polfuse_experiment* e) {
  return e ? e->output_dir.c_str() : "";
}

void polfuse_experiment_free(polfuse_experiment* e) { delete e; }

polfuse_status polfuse_compare(polfuse_experiment* const* experiments, size_t count, const char* out_dir) {
  return Guard([&] {
    Require(experiments && count > 0 && out_dir, "compare needs at least one experiment and an output dir");
    std::vector<polfuse::Experiment*> list;
    for (size_t i = 0; i < count; ++i) {
      Require(experiments[i] != nullptr, "null experiment");
      list.push_back(experiments[i]->experiment.get());
    }
    polfuse::Compare(list, out_dir);
  });
}

polfuse_status polfuse_dataset_load(const char* path, const char* task, polfuse_dataset** out) {
  return Guard([&] {
    Require(path && task && out, "null argument");
    *out = nullptr;
    auto d = std::make_unique<polfuse_dataset>();
    d->dataset = polfuse::LoadJsonl(path, polfuse::LookupTask(task));
    *out = d.release();
  });
}

size_t polfuse_dataset_size(const polfuse_dataset* d) { return d ? d->dataset.size() : 0; }

polfuse_status polfuse_dataset_class_count(const polfuse_dataset* d, const char* label, size_t* count) {
  return Guard([&] {
    Require(d && label && count, "null argument");
    if (d->dataset.task.ClassIndex(label) < 0) {
      throw polfuse::InvalidArgument(std::string("label '") + label + "' is not in the class set of " +
                                     d->dataset.task.name());
    }
    *count = 0;
    for (const auto& c : polfuse::ClassDistribution(d->dataset)) {
      if (c.label == label) *count = c.count;
    }
  });
}

void polfuse_dataset_free(polfuse_dataset* d) { delete d; }

polfuse_status polfuse_compute_metrics(const int* gold, const int* pred, size_t n, int num_classes,
                                       polfuse_metrics* out) {
  return Guard([&] {
    Require(gold && pred && out, "null argument");
    const auto r = polfuse::ComputeMetrics(std::span<const int>(gold, n), std::span<const int>(pred, n), num_classes);
    *out = {r.accuracy, r.macro_f1, r.macro_precision, r.macro_recall};
  });
}

polfuse_status polfuse_mcnemar_counts(size_t b, size_t c, double* statistic, double* p_value) {
  return Guard([&] {
    Require(statistic && p_value, "null argument");
    const auto r = polfuse::McNemarCounts(b, c);
    *statistic = r.statistic;
    *p_value = r.p_value;
  });
}

polfuse_status polfuse_mcnemar(const int* gold, const int* a, const int* b, size_t n, double* statistic,
                               double* p_value) {
  return Guard([&] {
    Require(statistic && p_value, "null argument");
    const auto r = polfuse::McNemar(Paired(gold, a, b, n, 2));
    *statistic = r.statistic;
    *p_value = r.p_value;
  });
}

polfuse_status polfuse_stuart_maxwell_table(const double* table, size_t k, double* statistic, int* df,
                                            double* p_value) {
  return Guard([&] {
    Require(table && statistic && df && p_value, "null argument");
    Require(k >= 2, "table must be at least 2 x 2");
    polfuse::Matrix m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    std::memcpy(m.data(), table, sizeof(double) * k * k);
    const auto r = polfuse::StuartMaxwellTable(m);
    *statistic = r.statistic;
    *df = r.df;
    *p_value = r.p_value;
  });
}

polfuse_status polfuse_paired_test(const int* gold, const int* a, const int* b, size_t n, int num_classes,
                                   double* statistic, int* df, double* p_value) {
  return Guard([&] {
    Require(statistic && df && p_value, "null argument");
    const auto r = polfuse::PairedTest(Paired(gold, a, b, n, num_classes));
    *statistic = r.statistic;
    *df = r.df;
    *p_value = r.p_value;
  });
}

polfuse_status polfuse_format_significance(double statistic, double p_value, double alpha, char* buf,
                                           size_t buf_len) {
  return Guard([&] {
    Require(buf != nullptr, "null buffer");
    polfuse::SignificanceResult r;
    r.statistic = statistic;
    r.p_value = p_value;
    const std::string s = polfuse::FormatSignificance(r, alpha);
    if (s.size() + 1 > buf_len) {
      throw polfuse::InvalidArgument("buffer too small: need " + std::to_string(s.size() + 1) + " bytes");
    }
    std::memcpy(buf, s.c_str(), s.size() + 1);
  });
}

}  // extern "C"
