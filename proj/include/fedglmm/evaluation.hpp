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

#ifndef FEDGLMM_EVALUATION_HPP
#define FEDGLMM_EVALUATION_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedglmm/model.hpp"

namespace fedglmm {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::int64_t total() const { return tp + fp + tn + fn; }
};

// Ratios are NaN with the matching flag false when the denominator is zero.
struct ConfusionRow {
  std::string term;
  ConfusionCounts counts;
  double precision = 0, recall = 0, tnr = 0, accuracy = 0;
  bool precision_defined = false, recall_defined = false, tnr_defined = false, accuracy_defined = false;
};

ConfusionRow confusion_row(std::string term, const ConfusionCounts& c);

struct SignificanceReport {
  double alpha = 0.05;
  std::vector<ConfusionRow> per_coefficient;
  ConfusionRow overall;  // counts pooled over coefficients
  ConfusionRow macro;    // mean of the defined per-coefficient ratios; counts are not meaningful
};

// Truth for coefficient j is beta_j != 0, the call is p_j < alpha. A NaN
// p-value never counts as significant.
SignificanceReport significance_confusion(const std::vector<Vector>& p_value_sets, const Vector& true_beta,
                                          double alpha = 0.05);

struct PowerCurves {
  std::vector<double> alpha_grid;
  std::vector<int> coefficients;  // 0-based indices with nonzero true value
  Matrix power;                   // coefficients x alpha_grid
};

bool rejects(double p_value, double alpha);

PowerCurves empirical_power(const std::vector<Vector>& p_value_sets, const Vector& true_beta,
                            const std::vector<double>& alpha_grid);

struct Interval {
  double low = 0, high = 0;
};

// Two-sided Wilson score interval. conf = 0.95 uses z = 1.959964.
Interval wilson_interval(std::int64_t successes, std::int64_t n, double conf = 0.95);
double normal_quantile(double prob);

struct BoundedRate {
  double value = 0;
  Interval bounds;
};

struct RocReport {
  // Descending; the first entry is +inf (nothing predicted positive).
  std::vector<double> thresholds;
  std::vector<double> tpr, fpr;
  double auc = 0;
  double best_threshold = 0;
  double youden_j = 0;
  ConfusionCounts at_best;
  BoundedRate precision, recall, f1;
};

// Score >= threshold predicts positive; labels must be 0/1 with both present.
RocReport roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct BoxStats {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
};

// Type 7 (linear interpolation) sample quantile of an unsorted sample.
double quantile(std::vector<double> values, double prob);

// Per coefficient summaries of beta_hat_j - beta_j.
std::vector<BoxStats> coefficient_error(const std::vector<Vector>& beta_hats, const Vector& true_beta);

// Delimited text tables.
std::string significance_csv(const SignificanceReport& r);
std::string power_csv(const PowerCurves& c);
std::string roc_csv(const RocReport& r);
std::string roc_summary_csv(const RocReport& r);
std::string coefficient_error_csv(const std::vector<BoxStats>& stats, const std::string& method);

}  // namespace fedglmm

#endif  // FEDGLMM_EVALUATION_HPP
