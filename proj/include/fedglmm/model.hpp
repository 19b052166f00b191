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

#ifndef FEDGLMM_MODEL_HPP
#define FEDGLMM_MODEL_HPP

// Random-intercept logistic model for one site:
//
//   y_ij ~ Bernoulli(sigmoid(x_ij' beta + mu_i)),   mu_i ~ N(0, tau^2)
//
// g(mu) is the log joint density of a site's outcomes and its random
// intercept, viewed as a function of mu.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fedglmm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SiteId = std::int64_t;

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ObservationRow {
  std::vector<double> covariates;  // covariates[0] is the intercept column, always 1
  int outcome = 0;
};

// One horizontal partition. Rows of `x` are observations; column 0 is the
// mandatory intercept column of ones.
struct SiteData {
  SiteId site_id = 0;
  Matrix x;
  Vector y;

  std::size_t n() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t p() const { return static_cast<std::size_t>(x.cols()); }
};

// Builds a validated site. Throws ModelError if the rows disagree on p,
// an outcome is not 0/1, or the intercept column is not all ones.
SiteData make_site(SiteId id, std::span<const ObservationRow> rows);

// Checks the SiteData invariants. Empty sites are accepted when
// `allow_empty` (validation partitions may be empty).
void validate_site(const SiteData& site, bool allow_empty = false);

struct Theta {
  Vector beta;
  double tau = 1.0;  // random-intercept standard deviation
};

void validate_theta(const Theta& theta, std::size_t p);

struct RandomEffectMode {
  double mu_hat = 0.0;
  double omega_hat = 0.0;  // sqrt(-1 / g_mumu(mu_hat))
};

double sigmoid(double x);

// log(sigmoid(x)) without forming sigmoid(x).
double log_sigmoid(double x);

double g_value(const SiteData& site, const Theta& theta, double mu);

struct GDerivs {
  double g_mu = 0.0;
  double g_mumu = 0.0;
  Vector g_beta;
  Matrix g_betabeta;
  Vector g_mubeta;
  double g_tau = 0.0;
};

GDerivs g_derivs(const SiteData& site, const Theta& theta, double mu);

// Third and fourth mu-derivatives plus their beta cross terms. Only needed
// at the mode, for the implicit derivatives of mu_hat and omega_hat.
struct GHigherDerivs {
  double g_mumumu = 0.0;
  Vector g_mumubeta;
  Matrix g_mubetabeta;
  double g_mumumumu = 0.0;
  Vector g_mumumubeta;
  Matrix g_mumubetabeta;
};

GHigherDerivs g_higher_derivs(const SiteData& site, const Theta& theta, double mu);

// Scalar-only pieces of g and its first two mu-derivatives; used by the
// inner mode solver, which never needs the beta blocks.
struct GScalar {
  double value = 0.0;
  double g_mu = 0.0;
  double g_mumu = 0.0;
};

GScalar g_scalar(const SiteData& site, const Theta& theta, double mu);

namespace detail {
// Variants taking the fixed part of the linear predictor, x * beta, so
// callers evaluating g at many mu values compute it once.
double g_value(const SiteData& site, const Vector& xb, double tau, double mu);
GScalar g_scalar(const SiteData& site, const Vector& xb, double tau, double mu);
GDerivs g_derivs(const SiteData& site, const Vector& xb, double tau, double mu);
GHigherDerivs g_higher_derivs(const SiteData& site, const Vector& xb, double mu);
}  // namespace detail

}  // namespace fedglmm

#endif  // FEDGLMM_MODEL_HPP
