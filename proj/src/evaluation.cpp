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

#include "polfuse/evaluation.hpp"

#include <Eigen/SVD>
#include <boost/math/distributions/binomial.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "polfuse/common.hpp"

namespace polfuse {
namespace {

std::string Fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string Short(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

void CheckPaired(const PairedPredictions& p) {
  if (p.gold.size() != p.a.size() || p.gold.size() != p.b.size()) {
    throw InvalidArgument("paired predictions must have equal lengths (gold " +
                          std::to_string(p.gold.size()) + ", A " + std::to_string(p.a.size()) +
                          ", B " + std::to_string(p.b.size()) + ")");
  }
  auto check = [&](const std::vector<int>& v, const char* what) {
    for (int x : v) {
      if (x < 0 || x >= p.num_classes) {
        throw InvalidArgument(std::string(what) + " label " + std::to_string(x) +
                              " outside the class set");
      }
    }
  };
  check(p.gold, "gold");
  check(p.a, "model A");
  check(p.b, "model B");
}

std::string Pad(const std::string& s, std::size_t width) {
  // Width in code points so "χ" and friends line up.
  std::size_t cps = 0;
  for (unsigned char ch : s) cps += (ch & 0xC0) != 0x80;
  return cps >= width ? s : s + std::string(width - cps, ' ');
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics.

EvaluationReport ComputeMetrics(std::span<const int> gold, std::span<const int> pred,
                                int num_classes) {
  if (gold.size() != pred.size()) {
    throw InvalidArgument("gold and predicted labels differ in length (" + std::to_string(gold.size()) +
                          " vs " + std::to_string(pred.size()) + ")");
  }
  if (gold.empty()) throw InvalidArgument("cannot compute metrics over zero documents");
  if (num_classes < 1) throw InvalidArgument("class set is empty");
  const auto k = static_cast<std::size_t>(num_classes);
  EvaluationReport r;
  r.n = gold.size();
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0 || gold[i] >= num_classes || pred[i] < 0 || pred[i] >= num_classes) {
      throw InvalidArgument("label outside the class set at position " + std::to_string(i));
    }
    ++r.confusion[static_cast<std::size_t>(gold[i])][static_cast<std::size_t>(pred[i])];
    correct += gold[i] == pred[i];
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
  r.precision.assign(k, 0);
  r.recall.assign(k, 0);
  r.f1.assign(k, 0);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t tp = r.confusion[c][c], predicted = 0, actual = 0;
    for (std::size_t o = 0; o < k; ++o) {
      predicted += r.confusion[o][c];
      actual += r.confusion[c][o];
    }
    const double p = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    const double rc = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
    r.precision[c] = p;
    r.recall[c] = rc;
    r.f1[c] = p + rc > 0 ? 2 * p * rc / (p + rc) : 0.0;
  }
  const double kk = static_cast<double>(k);
  r.macro_precision = std::accumulate(r.precision.begin(), r.precision.end(), 0.0) / kk;
  r.macro_recall = std::accumulate(r.recall.begin(), r.recall.end(), 0.0) / kk;
  r.macro_f1 = std::accumulate(r.f1.begin(), r.f1.end(), 0.0) / kk;
  for (std::size_t c = 0; c < k; ++c) r.class_set.push_back(std::to_string(c));
  return r;
}

EvaluationReport ComputeMetrics(std::span<const std::string> gold, std::span<const std::string> pred,
                                const std::vector<std::string>& class_set) {
  auto index = [&](const std::string& label) {
    auto it = std::find(class_set.begin(), class_set.end(), label);
    if (it == class_set.end()) {
      std::string all;
      for (const auto& c : class_set) all += (all.empty() ? "" : ", ") + c;
      throw InvalidArgument("label '" + label + "' is not in the class set {" + all + "}");
    }
    return static_cast<int>(it - class_set.begin());
  };
  std::vector<int> g, p;
  for (const auto& s : gold) g.push_back(index(s));
  for (const auto& s : pred) p.push_back(index(s));
  EvaluationReport r = ComputeMetrics(g, p, static_cast<int>(class_set.size()));
  r.class_set = class_set;
  return r;
}

nlohmann::json ReportToJson(const EvaluationReport& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t c = 0; c < r.class_set.size(); ++c) {
    per_class[r.class_set[c]] = {{"precision", r.precision[c]}, {"recall", r.recall[c]}, {"f1", r.f1[c]}};
  }
  return {
      {"n", r.n},
      {"accuracy", r.accuracy},
      {"macro_f1", r.macro_f1},
      {"macro_precision", r.macro_precision},
      {"macro_recall", r.macro_recall},
      {"class_set", r.class_set},
      {"per_class", per_class},
      {"confusion_matrix", r.confusion},
  };
}

// ---------------------------------------------------------------------------
// Significance tests.

double ChiSquareSurvival(double x, double df) {
  if (!(df > 0)) throw InvalidArgument("chi-square degrees of freedom must be positive");
  if (!(x > 0)) return 1.0;
  if (std::isinf(x)) return 0.0;
  return boost::math::gamma_q(df / 2.0, x / 2.0);
}

SignificanceResult McNemarCounts(std::size_t b, std::size_t c, const McNemarOptions& options) {
  SignificanceResult r;
  r.test_name = "mcnemar";
  r.df = 1;
  r.b = b;
  r.c = c;
  const std::size_t n = b + c;
  if (n == 0) return r;
  const double diff = std::max(std::abs(static_cast<double>(b) - static_cast<double>(c)) - 1.0, 0.0);
  r.statistic = diff * diff / static_cast<double>(n);
  if (options.exact_when_small && n < options.exact_below) {
    const boost::math::binomial_distribution<double> dist(static_cast<double>(n), 0.5);
    r.p_value = std::min(1.0, 2.0 * boost::math::cdf(dist, static_cast<double>(std::min(b, c))));
    r.exact = true;
  } else {
    r.p_value = ChiSquareSurvival(r.statistic, 1.0);
  }
  return r;
}

SignificanceResult McNemar(const PairedPredictions& p, const McNemarOptions& options) {
  if (p.num_classes != 2) {
    throw InvalidArgument("the McNemar test applies to binary tasks; use the Stuart-Maxwell test for " +
                          std::to_string(p.num_classes) + "-class predictions");
  }
  CheckPaired(p);
  std::size_t b = 0, c = 0;
  for (std::size_t i = 0; i < p.gold.size(); ++i) {
    const bool ra = p.a[i] == p.gold[i];
    const bool rb = p.b[i] == p.gold[i];
    b += ra && !rb;
    c += !ra && rb;
  }
  return McNemarCounts(b, c, options);
}

Matrix AgreementTable(const PairedPredictions& p) {
  CheckPaired(p);
  Matrix t = Matrix::Zero(p.num_classes, p.num_classes);
  for (std::size_t i = 0; i < p.a.size(); ++i) t(p.a[i], p.b[i]) += 1.0;
  return t;
}

SignificanceResult StuartMaxwellTable(const Matrix& n) {
  if (n.rows() != n.cols() || n.rows() < 2) throw InvalidArgument("Stuart-Maxwell needs a square k x k table, k >= 2");
  if ((n.array() < 0).any() || !n.allFinite()) throw InvalidArgument("table counts must be finite and non-negative");
  SignificanceResult r;
  r.test_name = "stuart_maxwell";
  const Eigen::Index m = n.rows() - 1;
  const Eigen::VectorXd rows = n.rowwise().sum();
  const Eigen::VectorXd cols = n.colwise().sum().transpose();
  Eigen::VectorXd d(m);
  Eigen::MatrixXd s(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    d(i) = rows(i) - cols(i);
    for (Eigen::Index j = 0; j < m; ++j) {
      s(i, j) = i == j ? rows(i) + cols(i) - 2 * n(i, i) : -(n(i, j) + n(j, i));
    }
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(s, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double tol = sv.size() ? sv(0) * static_cast<double>(m) * 1e-12 : 0.0;
  const Eigen::VectorXd ud = svd.matrixU().transpose() * d;
  const Eigen::VectorXd vd = svd.matrixV().transpose() * d;
  double stat = 0;
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > tol && sv(i) > 0) {
      stat += vd(i) * ud(i) / sv(i);
      ++rank;
    }
  }
  r.df = rank;
  if (rank == 0) return r;
  r.statistic = std::max(stat, 0.0);
  r.p_value = ChiSquareSurvival(r.statistic, rank);
  return r;
}

SignificanceResult StuartMaxwell(const PairedPredictions& p) {
  if (p.num_classes < 3) {
    throw InvalidArgument("the Stuart-Maxwell test is for ternary tasks; use the McNemar test for "
                          "binary predictions");
  }
  return StuartMaxwellTable(AgreementTable(p));
}

SignificanceResult PairedTest(const PairedPredictions& p) {
  return p.num_classes == 2 ? McNemar(p) : StuartMaxwell(p);
}

std::string FormatSignificance(const SignificanceResult& r, double alpha) {
  std::string p;
  if (r.p_value < 0.001) {
    p = "p < 0.001";
  } else if (r.p_value < 0.01) {
    p = "p < 0.01";
  } else if (r.p_value < 0.05) {
    p = "p < 0.05";
  } else {
    p = "p = " + Fixed(r.p_value, 3);
  }
  return "χ = " + Fixed(r.statistic, 3) + ", α = " + Short(alpha) + ", " + p;
}

// ---------------------------------------------------------------------------
// Homogeneous groups.

std::string GroupName(std::size_t index) {
  std::string out;
  ++index;
  while (index > 0) {
    --index;
    out.insert(out.begin(), static_cast<char>('A' + index % 26));
    index /= 26;
  }
  return out;
}

HomogeneousGroups GroupModels(std::span<const ModelPredictions> models, std::span<const int> gold,
                              int num_classes, double alpha, std::optional<std::string> reference) {
  if (models.empty()) throw InvalidArgument("no models to group");
  if (!(alpha > 0 && alpha < 1)) throw InvalidArgument("alpha must lie in (0, 1)");
  std::vector<double> acc(models.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i].predictions.size() != gold.size()) {
      throw InvalidArgument("model '" + models[i].name + "' was evaluated on a different test set (" +
                            std::to_string(models[i].predictions.size()) + " predictions for " +
                            std::to_string(gold.size()) + " gold labels)");
    }
    acc[i] = ComputeMetrics(gold, models[i].predictions, num_classes).accuracy;
  }
  std::vector<std::size_t> order(models.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return acc[x] > acc[y]; });

  HomogeneousGroups g;
  g.alpha = alpha;
  g.reference = reference;
  g.test_name = num_classes == 2 ? "mcnemar" : "stuart_maxwell";
  const std::size_t m = models.size();
  g.p_values = Matrix::Ones(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      PairedPredictions p{std::vector<int>(gold.begin(), gold.end()), models[order[i]].predictions,
                          models[order[j]].predictions, num_classes};
      const SignificanceResult t = PairedTest(p);
      g.tests.push_back(t);
      g.p_values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.p_value;
      g.p_values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = t.p_value;
    }
  }
  for (std::size_t i : order) g.models.push_back({models[i].name, acc[i], "", 0, false});

  std::size_t start = 0;
  while (start < m) {
    std::size_t end = start + 1;
    while (end < m) {
      bool similar = true;
      for (std::size_t k = start; k < end && similar; ++k) {
        similar = g.p_values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(end)) >= alpha;
      }
      if (!similar) break;
      ++end;
    }
    for (std::size_t k = start; k < end; ++k) {
      g.models[k].group_index = g.num_groups;
      g.models[k].group = GroupName(g.num_groups);
    }
    ++g.num_groups;
    start = end;
  }

  if (reference) {
    std::size_t ref = m;
    for (std::size_t i = 0; i < m; ++i) {
      if (g.models[i].name == *reference) ref = i;
    }
    if (ref == m) throw InvalidArgument("reference model '" + *reference + "' is not among the compared models");
    for (std::size_t i = 0; i < m; ++i) {
      g.models[i].beats_reference =
          i != ref && g.models[i].accuracy > g.models[ref].accuracy &&
          g.p_values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(ref)) < alpha;
    }
  }
  return g;
}

std::string GroupsTable(const HomogeneousGroups& g) {
  std::size_t name_width = 5;
  for (const auto& m : g.models) name_width = std::max(name_width, m.name.size());
  name_width += 2;
  std::ostringstream os;
  std::string header = Pad("Model", name_width) + Pad("Acc", 8) + "Groups";
  os << header << "\n" << std::string(std::max<std::size_t>(header.size(), name_width + 8 + 2 * g.num_groups), '-') << "\n";
  for (const auto& m : g.models) {
    std::string line = Pad(m.name, name_width) + Pad(Fixed(m.accuracy, 2) + (m.beats_reference ? "*" : ""), 8);
    for (std::size_t k = 0; k < g.num_groups; ++k) {
      const std::string cell = k == m.group_index ? m.group : "";
      line += Pad(cell, GroupName(k).size() + 1);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    os << line << "\n";
  }
  os << "\npairwise test: " << g.test_name << ", alpha = " << Short(g.alpha)
     << ", no multiplicity correction\n";
  if (g.reference) os << "* significantly better than " << *g.reference << "\n";
  return os.str();
}

std::string PairwiseCsv(const HomogeneousGroups& g) {
  std::ostringstream os;
  os << "model_a,model_b,test,statistic,df,p_value\n";
  std::size_t t = 0;
  char buf[128];
  for (std::size_t i = 0; i < g.models.size(); ++i) {
    for (std::size_t j = i + 1; j < g.models.size(); ++j, ++t) {
      const auto& r = g.tests[t];
      std::snprintf(buf, sizeof(buf), "%.10g,%d,%.10g", r.statistic, r.df, r.p_value);
      os << g.models[i].name << ',' << g.models[j].name << ',' << r.test_name << ',' << buf << "\n";
    }
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Permutation importance.

ImportanceReport PermutationImportance(const ScoreFunctionCallback& score, const Matrix& x,
                                       std::span<const std::string> names, int repeats,
                                       std::uint64_t seed) {
  if (repeats < 1) throw InvalidArgument("permutation importance needs repeats >= 1");
  if (names.size() != static_cast<std::size_t>(x.cols())) {
    throw InvalidArgument("got " + std::to_string(names.size()) + " feature names for " +
                          std::to_string(x.cols()) + " columns");
  }
  ImportanceReport r;
  r.repeats = repeats;
  r.seed = seed;
  r.base_score = score(x);
  const std::uint64_t stream = DeriveSeed(seed, "importance");
  Matrix work = x;
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Rng rng(DeriveSeed(stream, static_cast<std::uint64_t>(j)));
    std::vector<double> drops;
    for (int rep = 0; rep < repeats; ++rep) {
      std::iota(perm.begin(), perm.end(), 0);
      rng.Shuffle(std::span<Eigen::Index>(perm));
      for (Eigen::Index i = 0; i < x.rows(); ++i) work(i, j) = x(perm[static_cast<std::size_t>(i)], j);
      drops.push_back(r.base_score - score(work));
    }
    work.col(j) = x.col(j);
    const double mean = std::accumulate(drops.begin(), drops.end(), 0.0) / repeats;
    double var = 0;
    for (double d : drops) var += (d - mean) * (d - mean);
    r.features.push_back({names[static_cast<std::size_t>(j)], static_cast<std::size_t>(j), mean,
                          std::sqrt(var / repeats)});
  }
  std::stable_sort(r.features.begin(), r.features.end(),
                   [](const FeatureImportance& a, const FeatureImportance& b) { return a.weight > b.weight; });
  return r;
}

std::string ImportanceTable(const ImportanceReport& r, std::size_t tail) {
  std::ostringstream os;
  os << Pad("weight", 10) << "feature\n" << std::string(40, '-') << "\n";
  auto row = [&](const FeatureImportance& f) { os << Pad(Fixed(f.weight, 3), 10) << f.feature << "\n"; };
  const std::size_t n = r.features.size();
  if (n <= 2 * tail) {
    for (const auto& f : r.features) row(f);
  } else {
    for (std::size_t i = 0; i < tail; ++i) row(r.features[i]);
    os << Pad("...", 10) << "...\n";
    for (std::size_t i = n - tail; i < n; ++i) row(r.features[i]);
  }
  return os.str();
}

std::string ImportanceCsv(const ImportanceReport& r) {
  std::ostringstream os;
  os << "rank,feature,weight,std\n";
  char buf[96];
  for (std::size_t i = 0; i < r.features.size(); ++i) {
    const auto& f = r.features[i];
    std::string name = f.feature;
    if (name.find_first_of(",\"") != std::string::npos) {
      std::string q = "\"";
      for (char ch : name) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      name = q + "\"";
    }
    std::snprintf(buf, sizeof(buf), "%.10g,%.10g", f.weight, f.stddev);
    os << i + 1 << ',' << name << ',' << buf << "\n";
  }
  return os.str();
}

}  // namespace polfuse
