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

#ifndef FEDGLMM_SITE_ENGINE_HPP
#define FEDGLMM_SITE_ENGINE_HPP

#include <cstdint>
#include <optional>
#include <stdexcept>

#include "fedglmm/model.hpp"
#include "fedglmm/quadrature.hpp"

namespace fedglmm {

class ModeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ApproximationMethod {
  enum class Kind { LA, GH };
  Kind kind = Kind::LA;
  int gh_order = 1;  // LA behaves as GH with a single node

  static ApproximationMethod laplace() { return {Kind::LA, 1}; }
  static ApproximationMethod gauss_hermite(int k) { return {Kind::GH, k}; }

  int order() const { return kind == Kind::LA ? 1 : gh_order; }
  void validate() const;
  bool operator==(const ApproximationMethod&) const = default;
};

// What a site transmits each round.
struct SiteSummary {
  std::int64_t p = 0;
  Vector score;     // d loglik / d beta
  Matrix hessian;   // d^2 loglik / d beta^2
  double loglik = 0.0;  // penalised local log-likelihood
  double mu_hat = 0.0;
  double dtau = 0.0;    // d loglik / d tau
  std::int64_t n_i = 0;
  Vector beta_echo;
  double lambda_echo = 0.0;
  std::int64_t k_echo = 1;
};

struct ModeOptions {
  int max_newton_iters = 100;
  double mu_tol = 1e-6;  // bound on the remaining Newton step at the mode
  std::optional<double> warm_start;
};

// Maximises g over mu by guarded Newton from 0 (or the warm start), falling
// back to bisection on g_mu. Post: |g_mu| < 1e-10 * max(1, n) and
// |g_mu / g_mumu| < mu_tol.
RandomEffectMode fit_random_effect(const SiteData& site, const Theta& theta,
                                   const ModeOptions& options = {});

struct SummaryOptions {
  bool penalize_intercept = false;
  ModeOptions mode;
};

// Penalised local log-likelihood of one site and its analytic derivatives.
// The mode is re-solved at theta, and the derivatives include the implicit
// dependence of mu_hat and omega_hat on beta and tau.
SiteSummary site_summary(const SiteData& site, const Theta& theta,
                         const ApproximationMethod& method, double lambda,
                         const HermiteRule& rule, const SummaryOptions& options = {});

// lambda * ||beta||^2 over the penalised coordinates.
double penalty_value(const Vector& beta, double lambda, bool penalize_intercept);

}  // namespace fedglmm

#endif  // FEDGLMM_SITE_ENGINE_HPP
