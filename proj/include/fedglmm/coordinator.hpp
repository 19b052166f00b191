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

#ifndef FEDGLMM_COORDINATOR_HPP
#define FEDGLMM_COORDINATOR_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedglmm/model.hpp"
#include "fedglmm/site_engine.hpp"

namespace fedglmm {

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConvergenceConfig {
  double theta_tol = 1e-3;
  double mu_tol = 1e-6;         // site mode accuracy, see mode_options()
  int max_outer_iters = 200;
  int max_newton_iters = 100;  // site mode solve
  double damping_init = 1e-8;
  double damping_growth = 10.0;
  double damping_cap = 1e8;

  void validate() const;
};

// The mode-solver settings sites should use under `cfg`.
ModeOptions mode_options(const ConvergenceConfig& cfg);

enum class Partition { Train, Validation };

// Everything a site needs to know for a sequence of rounds. Broadcast once
// per lambda candidate.
struct SessionConfig {
  ApproximationMethod method;
  double lambda = 0.0;
  bool penalize_intercept = false;
  double split_ratio = 1.0;  // fraction kept for training; 1 means no split
  std::uint64_t split_seed = 0;

  bool operator==(const SessionConfig&) const = default;
};

struct FitResult;

// Source of per-round site summaries. Implementations must return summaries
// in ascending site_id order so aggregation order is fixed.
class SummaryProvider {
 public:
  virtual ~SummaryProvider() = default;
  virtual std::int64_t num_params() const = 0;
  virtual std::vector<SiteId> site_ids() const = 0;
  virtual void configure(const SessionConfig& session) = 0;
  virtual std::vector<SiteSummary> collect(Partition partition, const Theta& theta) = 0;
  virtual void publish(const FitResult&) {}
};

struct ModelConfig {
  ApproximationMethod method;
  std::optional<double> lambda;  // unset: sweep lambda_grid and select on validation
  std::vector<double> lambda_grid = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  bool penalize_intercept = false;
  double split_ratio = 0.7;
  std::uint64_t split_seed = 20220713;
  std::optional<double> fixed_tau;  // freeze tau (no tau updates)
  double initial_tau = 1.0;
};

struct TrajectoryEntry {
  double lambda = 0.0;
  int iteration = 0;
  Vector beta;
  double tau = 0.0;
  double delta_inf = 0.0;
  double loglik = 0.0;  // penalised, summed over sites
  double damping = 0.0;
  bool damping_engaged = false;
};

struct LambdaCandidate {
  double lambda = 0.0;
  bool finished = false;  // false: hard failure, see `error`
  bool converged = false;
  int iterations = 0;
  double train_loglik = 0.0;
  double validation_loglik = 0.0;
  double validation_aic = 0.0;
  double validation_bic = 0.0;
  std::string error;
};

struct FitResult {
  Vector beta_hat;
  double tau_hat = 0.0;
  std::vector<double> mu_hats;
  std::vector<SiteId> site_ids;
  double lambda_hat = 0.0;
  double loglik = 0.0;  // unpenalised training log-likelihood
  double aic = 0.0;
  double bic = 0.0;
  double validation_loglik = 0.0;  // NaN without a validation split
  double validation_aic = 0.0;
  double validation_bic = 0.0;
  std::int64_t n_train = 0;
  std::int64_t n_validation = 0;
  bool inference_available = false;
  Vector std_err;
  Vector z;
  Vector p_values;
  Vector ci_low;
  Vector ci_high;
  Matrix hessian;  // aggregated penalised Hessian at the estimate
  int iterations = 0;
  bool converged = false;
  double final_delta = 0.0;
  std::vector<TrajectoryEntry> trajectory;
  std::vector<LambdaCandidate> candidates;
};

using RoundEvaluator = std::function<std::vector<SiteSummary>(const Theta&)>;

struct NewtonStep {
  Theta theta;
  std::vector<SiteSummary> summaries;  // evaluated at `theta`
  double damping = 0.0;
  bool damping_engaged = false;
};

// One damped Newton update of beta: solves (H - delta I) step = S, starting
// with delta = 0 and escalating while the solve is singular or the step does
// not increase the summed log-likelihood. Throws FitError past the cap.
NewtonStep global_newton_step(const std::vector<SiteSummary>& summaries, const Theta& theta,
                              const ConvergenceConfig& cfg, const RoundEvaluator& evaluate,
                              int round = 0);

struct TauStep {
  Theta theta;
  std::vector<SiteSummary> summaries;
};

// Backtracking gradient ascent on log(tau).
TauStep update_tau(const std::vector<SiteSummary>& summaries, const Theta& theta,
                   const RoundEvaluator& evaluate);

FitResult fit(SummaryProvider& provider, const ModelConfig& model, const ConvergenceConfig& cfg);

struct WaldInference {
  Vector std_err;
  Vector z;
  Vector p_values;
  Vector ci_low;
  Vector ci_high;
};

inline constexpr double kWaldCritical = 1.959964;

double normal_cdf(double x);

// Throws InferenceError if -H is not numerically invertible.
WaldInference wald_inference(const Vector& beta_hat, const Matrix& aggregated_hessian);

struct InformationCriteria {
  double aic = 0.0;
  double bic = 0.0;
};

InformationCriteria information_criteria(double loglik, std::int64_t k, std::int64_t n);

struct SplitResult {
  std::vector<SiteData> train;
  std::vector<SiteData> validation;
  std::vector<std::string> warnings;
};

// Per-site split stratified by outcome; deterministic in (seed, site_id).
// Sites with fewer than two rows stay whole in the training partition.
SplitResult train_validation_split(const std::vector<SiteData>& data, double ratio,
                                   std::uint64_t seed);

// True when -H cannot be treated as positive definite at working precision.
bool numerically_singular(const Matrix& neg_hessian);

double summed_loglik(const std::vector<SiteSummary>& summaries);

}  // namespace fedglmm

#endif  // FEDGLMM_COORDINATOR_HPP
