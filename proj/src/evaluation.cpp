/*
 * Copyright (c) 2026 The fedglmm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "fedglmm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fedglmm/coordinator.hpp"
#include "fedglmm/io.hpp"

namespace fedglmm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double ratio(std::int64_t num, std::int64_t den, bool& defined) {
  defined = den > 0;
  return defined ? static_cast<double>(num) / static_cast<double>(den) : kNaN;
}

void check_sets(const std::vector<Vector>& sets, const Vector& truth, const char* what) {
  for (const auto& v : sets)
    if (v.size() != truth.size())
      throw EvaluationError(std::string(what) + " vector has length " + std::to_string(v.size()) +
                            ", expected " + std::to_string(truth.size()));
}

std::string term_name(Eigen::Index j) { return "x" + std::to_string(j + 1); }

std::string real_or_empty(double v, bool defined) { return defined ? format_real(v) : ""; }

}  // namespace

ConfusionRow confusion_row(std::string term, const ConfusionCounts& c) {
  ConfusionRow r;
  r.term = std::move(term);
  r.counts = c;
  r.precision = ratio(c.tp, c.tp + c.fp, r.precision_defined);
  r.recall = ratio(c.tp, c.tp + c.fn, r.recall_defined);
  r.tnr = ratio(c.tn, c.tn + c.fp, r.tnr_defined);
  r.accuracy = ratio(c.tp + c.tn, c.total(), r.accuracy_defined);
  return r;
}

bool rejects(double p_value, double alpha) {
  if (std::isnan(p_value)) return false;
  return alpha >= 1.0 || p_value < alpha;
}

SignificanceReport significance_confusion(const std::vector<Vector>& p_value_sets, const Vector& true_beta,
                                          double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw EvaluationError("alpha must lie in [0, 1]");
  check_sets(p_value_sets, true_beta, "p-value");
  SignificanceReport rep;
  rep.alpha = alpha;
  ConfusionCounts pooled;
  for (Eigen::Index j = 0; j < true_beta.size(); ++j) {
    ConfusionCounts c;
    const bool truth = true_beta[j] != 0.0;
    for (const auto& p : p_value_sets) {
      const bool call = rejects(p[j], alpha);
      if (truth)
        ++(call ? c.tp : c.fn);
      else
        ++(call ? c.fp : c.tn);
    }
    pooled.tp += c.tp;
    pooled.fp += c.fp;
    pooled.tn += c.tn;
    pooled.fn += c.fn;
    rep.per_coefficient.push_back(confusion_row(term_name(j), c));
  }
  rep.overall = confusion_row("overall", pooled);

  ConfusionRow& m = rep.macro;
  m.term = "macro";
  auto average = [&](double ConfusionRow::*val, bool ConfusionRow::*def, double& out, bool& out_def) {
    double s = 0;
    int k = 0;
    for (const auto& r : rep.per_coefficient)
      if (r.*def) {
        s += r.*val;
        ++k;
      }
    out_def = k > 0;
    out = out_def ? s / k : kNaN;
  };
  average(&ConfusionRow::precision, &ConfusionRow::precision_defined, m.precision, m.precision_defined);
  average(&ConfusionRow::recall, &ConfusionRow::recall_defined, m.recall, m.recall_defined);
  average(&ConfusionRow::tnr, &ConfusionRow::tnr_defined, m.tnr, m.tnr_defined);
  average(&ConfusionRow::accuracy, &ConfusionRow::accuracy_defined, m.accuracy, m.accuracy_defined);
  return rep;
}

PowerCurves empirical_power(const std::vector<Vector>& p_value_sets, const Vector& true_beta,
                            const std::vector<double>& alpha_grid) {
  if (p_value_sets.size() < 2) throw EvaluationError("empirical power needs at least 2 datasets");
  check_sets(p_value_sets, true_beta, "p-value");
  for (double a : alpha_grid)
    if (!(a >= 0.0 && a <= 1.0)) throw EvaluationError("alpha grid values must lie in [0, 1]");
  PowerCurves out;
  out.alpha_grid = alpha_grid;
  for (Eigen::Index j = 0; j < true_beta.size(); ++j)
    if (true_beta[j] != 0.0) out.coefficients.push_back(static_cast<int>(j));
  out.power.resize(static_cast<Eigen::Index>(out.coefficients.size()), static_cast<Eigen::Index>(alpha_grid.size()));
  const double d = static_cast<double>(p_value_sets.size());
  for (std::size_t c = 0; c < out.coefficients.size(); ++c)
    for (std::size_t a = 0; a < alpha_grid.size(); ++a) {
      int hits = 0;
      for (const auto& p : p_value_sets) hits += rejects(p[out.coefficients[c]], alpha_grid[a]);
      out.power(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(a)) = hits / d;
    }
  return out;
}

double normal_quantile(double prob) {
  if (!(prob > 0.0 && prob < 1.0)) throw EvaluationError("quantile probability must lie in (0, 1)");
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < prob ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Interval wilson_interval(std::int64_t successes, std::int64_t n, double conf) {
  if (n < 1 || successes < 0 || successes > n) throw EvaluationError("wilson interval needs 0 <= successes <= n, n >= 1");
  if (!(conf > 0.0 && conf < 1.0)) throw EvaluationError("confidence must lie in (0, 1)");
  const double z = conf == 0.95 ? kWaldCritical : normal_quantile(0.5 + conf / 2.0);
  const double nn = static_cast<double>(n);
  const double ph = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double centre = (ph + z2 / (2 * nn)) / (1 + z2 / nn);
  const double half = z / (1 + z2 / nn) * std::sqrt(ph * (1 - ph) / nn + z2 / (4 * nn * nn));
  Interval r{std::max(0.0, centre - half), std::min(1.0, centre + half)};
  if (successes == 0) r.low = 0.0;
  if (successes == n) r.high = 1.0;
  r.low = std::min(r.low, ph);
  r.high = std::max(r.high, ph);
  return r;
}

RocReport roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw EvaluationError("scores and labels differ in length");
  std::int64_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw EvaluationError("labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw EvaluationError("scores must be finite");
    (labels[i] ? pos : neg)++;
  }
  if (pos == 0 || neg == 0) throw EvaluationError("AUC is undefined when labels contain a single class");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocReport r;
  r.thresholds.push_back(std::numeric_limits<double>::infinity());
  r.tpr.push_back(0.0);
  r.fpr.push_back(0.0);
  std::vector<ConfusionCounts> counts{{0, 0, neg, pos}};
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? tp : fp)++;
    r.thresholds.push_back(s);
    r.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
    r.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
    counts.push_back({tp, fp, neg - fp, pos - tp});
  }

  // Trapezoids in integer units keep the area exact up to one division.
  long double area = 0;
  for (std::size_t k = 1; k < counts.size(); ++k)
    area += static_cast<long double>(counts[k].fp - counts[k - 1].fp) *
            static_cast<long double>(counts[k].tp + counts[k - 1].tp) / 2.0L;
  r.auc = static_cast<double>(area / (static_cast<long double>(pos) * static_cast<long double>(neg)));

  std::size_t best = 1;
  r.youden_j = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < counts.size(); ++k) {
    const double j = r.tpr[k] - r.fpr[k];
    if (j > r.youden_j) {
      r.youden_j = j;
      best = k;
    }
  }
  r.best_threshold = r.thresholds[best];
  r.at_best = counts[best];
  const auto& c = r.at_best;
  r.precision = {static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp), wilson_interval(c.tp, c.tp + c.fp)};
  r.recall = {static_cast<double>(c.tp) / static_cast<double>(pos), wilson_interval(c.tp, pos)};
  auto f1 = [](double p, double q) { return p + q > 0 ? 2 * p * q / (p + q) : 0.0; };
  r.f1 = {f1(r.precision.value, r.recall.value),
          {f1(r.precision.bounds.low, r.recall.bounds.low), f1(r.precision.bounds.high, r.recall.bounds.high)}};
  return r;
}

double quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw EvaluationError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<BoxStats> coefficient_error(const std::vector<Vector>& beta_hats, const Vector& true_beta) {
  if (beta_hats.empty()) throw EvaluationError("coefficient error needs at least one dataset");
  check_sets(beta_hats, true_beta, "estimate");
  std::vector<BoxStats> out;
  for (Eigen::Index j = 0; j < true_beta.size(); ++j) {
    std::vector<double> d;
    for (const auto& b : beta_hats) d.push_back(b[j] - true_beta[j]);
    std::sort(d.begin(), d.end());
    BoxStats s;
    s.min = d.front();
    s.max = d.back();
    s.q1 = quantile(d, 0.25);
    s.median = quantile(d, 0.5);
    s.q3 = quantile(d, 0.75);
    // Sorted summation keeps the mean independent of dataset order.
    s.mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    out.push_back(s);
  }
  return out;
}

std::string significance_csv(const SignificanceReport& r) {
  std::string out = "term,alpha,tp,fp,tn,fn,precision,recall,tnr,accuracy\n";
  auto row = [&](const ConfusionRow& c, bool counts) {
    out += c.term + "," + format_real(r.alpha) + ",";
    if (counts)
      out += std::to_string(c.counts.tp) + "," + std::to_string(c.counts.fp) + "," + std::to_string(c.counts.tn) +
             "," + std::to_string(c.counts.fn);
    else
      out += ",,,";
    out += "," + real_or_empty(c.precision, c.precision_defined) + "," + real_or_empty(c.recall, c.recall_defined) +
           "," + real_or_empty(c.tnr, c.tnr_defined) + "," + real_or_empty(c.accuracy, c.accuracy_defined) + "\n";
  };
  for (const auto& c : r.per_coefficient) row(c, true);
  row(r.overall, true);
  row(r.macro, false);
  return out;
}

std::string power_csv(const PowerCurves& c) {
  std::string out = "term,alpha,power\n";
  for (std::size_t i = 0; i < c.coefficients.size(); ++i)
    for (std::size_t a = 0; a < c.alpha_grid.size(); ++a)
      out += term_name(c.coefficients[i]) + "," + format_real(c.alpha_grid[a]) + "," +
             format_real(c.power(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a))) + "\n";
  return out;
}

std::string roc_csv(const RocReport& r) {
  std::string out = "threshold,tpr,fpr\n";
  for (std::size_t k = 0; k < r.thresholds.size(); ++k)
    out += format_real(r.thresholds[k]) + "," + format_real(r.tpr[k]) + "," + format_real(r.fpr[k]) + "\n";
  return out;
}

std::string roc_summary_csv(const RocReport& r) {
  std::string out = "metric,value,low,high\n";
  out += "auc," + format_real(r.auc) + ",,\n";
  out += "best_threshold," + format_real(r.best_threshold) + ",,\n";
  out += "youden_j," + format_real(r.youden_j) + ",,\n";
  auto bounded = [&](const char* name, const BoundedRate& b) {
    out += std::string(name) + "," + format_real(b.value) + "," + format_real(b.bounds.low) + "," +
           format_real(b.bounds.high) + "\n";
  };
  bounded("precision", r.precision);
  bounded("recall", r.recall);
  bounded("f1", r.f1);
  return out;
}

std::string coefficient_error_csv(const std::vector<BoxStats>& stats, const std::string& method) {
  std::string out = "method,term,min,q1,median,q3,max,mean\n";
  for (std::size_t j = 0; j < stats.size(); ++j) {
    const auto& s = stats[j];
    out += method + "," + term_name(static_cast<Eigen::Index>(j)) + "," + format_real(s.min) + "," +
           format_real(s.q1) + "," + format_real(s.median) + "," + format_real(s.q3) + "," + format_real(s.max) +
           "," + format_real(s.mean) + "\n";
  }
  return out;
}

}  // namespace fedglmm
