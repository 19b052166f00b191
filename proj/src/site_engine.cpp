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

#include "fedglmm/site_engine.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace fedglmm {

namespace {

constexpr double kSqrt2 = 1.41421356237309504880;

double mode_tolerance(const SiteData& site) {
  return 1e-10 * std::max(1.0, static_cast<double>(site.n()));
}

double bisect_mode(const SiteData& site, const Vector& xb, double tau, double tol) {
  double lo = -50.0 * tau, hi = 50.0 * tau;
  // g_mu is strictly decreasing; widen until it brackets a sign change.
  for (int i = 0; i < 60 && detail::g_scalar(site, xb, tau, lo).g_mu < 0.0; ++i) lo *= 2.0;
  for (int i = 0; i < 60 && detail::g_scalar(site, xb, tau, hi).g_mu > 0.0; ++i) hi *= 2.0;
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double gm = detail::g_scalar(site, xb, tau, mid).g_mu;
    if (std::abs(gm) < tol || mid == lo || mid == hi) return mid;
    (gm > 0.0 ? lo : hi) = mid;
  }
  throw ModeError("site " + std::to_string(site.site_id) + ": random-effect mode did not converge");
}

RandomEffectMode solve_mode(const SiteData& site, const Vector& xb, double tau,
                            const ModeOptions& options) {
  const double tol = mode_tolerance(site);
  double mu = options.warm_start.value_or(0.0);
  if (!std::isfinite(mu)) mu = 0.0;
  bool converged = false;
  auto cur = detail::g_scalar(site, xb, tau, mu);
  for (int it = 0; it < options.max_newton_iters; ++it) {
    if (std::abs(cur.g_mu) < tol) {
      converged = true;
      break;
    }
    double step = -cur.g_mu / cur.g_mumu;
    auto next = detail::g_scalar(site, xb, tau, mu + step);
    // Near the optimum the change in g is below rounding, so a step that
    // shrinks |g_mu| is also accepted.
    auto improves = [&](const GScalar& n) {
      return n.value >= cur.value || std::abs(n.g_mu) < std::abs(cur.g_mu);
    };
    for (int h = 0; h < 60 && !improves(next); ++h) {
      step *= 0.5;
      next = detail::g_scalar(site, xb, tau, mu + step);
    }
    mu += step;
    cur = next;
  }
  if (converged) {
    // One polishing step; quadratic convergence makes it a refinement.
    const double step = -cur.g_mu / cur.g_mumu;
    const auto polished = detail::g_scalar(site, xb, tau, mu + step);
    if (std::abs(polished.g_mu) <= std::abs(cur.g_mu)) {
      mu += step;
      cur = polished;
    }
  } else {
    mu = bisect_mode(site, xb, tau, tol);
    cur = detail::g_scalar(site, xb, tau, mu);
    if (!(std::abs(cur.g_mu) < tol))
      throw ModeError("site " + std::to_string(site.site_id) +
                      ": random-effect mode did not converge after bisection fallback");
  }
  if (!(cur.g_mumu < 0.0) || !std::isfinite(cur.g_mumu))
    throw ModeError("site " + std::to_string(site.site_id) + ": g_mumu at the mode is not negative");
  if (!(std::abs(cur.g_mu / cur.g_mumu) < options.mu_tol))
    throw ModeError("site " + std::to_string(site.site_id) + ": mode step above mu_tol");
  return {mu, std::sqrt(-1.0 / cur.g_mumu)};
}

// Derivatives of mu_hat(beta, tau) and omega_hat(beta, tau), by implicit
// differentiation of g_mu(mu_hat; beta, tau) = 0.
struct ModeSensitivity {
  Vector mu_beta;
  Matrix mu_betabeta;
  Vector omega_beta;
  Matrix omega_betabeta;
  double mu_tau = 0.0;
  double omega_tau = 0.0;
};

ModeSensitivity mode_sensitivity(const GDerivs& d, const GHigherDerivs& h, double mu_hat,
                                 double omega, double tau) {
  ModeSensitivity s;
  const double a = d.g_mumu;
  s.mu_beta = -d.g_mubeta / a;
  s.mu_betabeta = -(h.g_mumumu * s.mu_beta * s.mu_beta.transpose() +
                    s.mu_beta * h.g_mumubeta.transpose() + h.g_mumubeta * s.mu_beta.transpose() +
                    h.g_mubetabeta) /
                  a;
  const Vector a_beta = h.g_mumumu * s.mu_beta + h.g_mumubeta;
  const Matrix a_betabeta = h.g_mumumumu * s.mu_beta * s.mu_beta.transpose() +
                            s.mu_beta * h.g_mumumubeta.transpose() +
                            h.g_mumumubeta * s.mu_beta.transpose() + h.g_mumumu * s.mu_betabeta +
                            h.g_mumubetabeta;
  const double w3 = omega * omega * omega;
  const double w5 = w3 * omega * omega;
  s.omega_beta = 0.5 * w3 * a_beta;
  s.omega_betabeta = 0.75 * w5 * a_beta * a_beta.transpose() + 0.5 * w3 * a_betabeta;

  const double tau3 = tau * tau * tau;
  const double g_mutau = 2.0 * mu_hat / tau3;
  const double g_mumutau = 2.0 / tau3;
  s.mu_tau = -g_mutau / a;
  const double a_tau = h.g_mumumu * s.mu_tau + g_mumutau;
  s.omega_tau = 0.5 * w3 * a_tau;
  return s;
}

Vector penalty_mask(Eigen::Index p, bool penalize_intercept) {
  Vector m = Vector::Ones(p);
  if (!penalize_intercept && p > 0) m(0) = 0.0;
  return m;
}

void symmetrize(Matrix& m) {
  Matrix t = 0.5 * (m + m.transpose());
  m = std::move(t);
}

}  // namespace

void ApproximationMethod::validate() const {
  if (kind == Kind::GH && (gh_order < 1 || gh_order > kMaxHermiteRuleOrder))
    throw QuadratureError("Gauss-Hermite order must be in [1, " +
                          std::to_string(kMaxHermiteRuleOrder) + "]");
}

RandomEffectMode fit_random_effect(const SiteData& site, const Theta& theta,
                                   const ModeOptions& options) {
  validate_theta(theta, site.p());
  return solve_mode(site, site.x * theta.beta, theta.tau, options);
}

double penalty_value(const Vector& beta, double lambda, bool penalize_intercept) {
  const Vector m = penalty_mask(beta.size(), penalize_intercept);
  return lambda * m.dot(beta.cwiseProduct(beta));
}

SiteSummary site_summary(const SiteData& site, const Theta& theta,
                         const ApproximationMethod& method, double lambda,
                         const HermiteRule& rule, const SummaryOptions& options) {
  method.validate();
  validate_theta(theta, site.p());
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ModelError("lambda must be non-negative");
  if (rule.order != method.order())
    throw QuadratureError("rule order " + std::to_string(rule.order) +
                          " does not match method order " + std::to_string(method.order()));

  const double tau = theta.tau;
  const Vector xb = site.x * theta.beta;
  const RandomEffectMode mode = solve_mode(site, xb, tau, options.mode);
  const double mu_hat = mode.mu_hat;
  const double omega = mode.omega_hat;

  const GDerivs at_mode = detail::g_derivs(site, xb, tau, mu_hat);
  const GHigherDerivs higher = detail::g_higher_derivs(site, xb, mu_hat);
  const ModeSensitivity sens = mode_sensitivity(at_mode, higher, mu_hat, omega, tau);

  const Eigen::Index p = site.x.cols();
  Vector score(p);
  Matrix hessian(p, p);
  double loglik = 0.0;
  double dtau = 0.0;

  // d log(omega) / d beta contributions, common to both approximations.
  const Vector log_omega_beta = sens.omega_beta / omega;
  const Matrix log_omega_betabeta =
      sens.omega_betabeta / omega - sens.omega_beta * sens.omega_beta.transpose() / (omega * omega);
  const double log_omega_tau = sens.omega_tau / omega;

  if (method.kind == ApproximationMethod::Kind::LA) {
    loglik = log_laplace(detail::g_value(site, xb, tau, mu_hat), at_mode.g_mumu);
    score = log_omega_beta + at_mode.g_beta + at_mode.g_mu * sens.mu_beta;
    hessian = log_omega_betabeta + at_mode.g_betabeta +
              at_mode.g_mubeta * sens.mu_beta.transpose() +
              sens.mu_beta * at_mode.g_mubeta.transpose() +
              at_mode.g_mumu * sens.mu_beta * sens.mu_beta.transpose() +
              at_mode.g_mu * sens.mu_betabeta;
    dtau = log_omega_tau + at_mode.g_tau + at_mode.g_mu * sens.mu_tau;
  } else {
    const auto k_count = rule.nodes.size();
    std::vector<double> log_f(k_count);
    std::vector<GDerivs> node_derivs;
    std::vector<double> node_mu(k_count);
    node_derivs.reserve(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
      const double x = rule.nodes[k];
      node_mu[k] = mu_hat + kSqrt2 * omega * x;
      log_f[k] = rule.log_weights[k] + detail::g_value(site, xb, tau, node_mu[k]) + x * x;
      node_derivs.push_back(detail::g_derivs(site, xb, tau, node_mu[k]));
    }
    const double lse = log_sum_exp(log_f);
    loglik = std::log(kSqrt2) + std::log(omega) + lse;

    Vector mean_d1 = Vector::Zero(p);
    Matrix second = Matrix::Zero(p, p);
    double mean_dtau = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
      const double w = std::exp(log_f[k] - lse);
      const double x = rule.nodes[k];
      const GDerivs& d = node_derivs[k];
      const Vector z_beta = sens.mu_beta + kSqrt2 * x * sens.omega_beta;
      const Matrix z_betabeta = sens.mu_betabeta + kSqrt2 * x * sens.omega_betabeta;
      const Vector d1 = d.g_beta + d.g_mu * z_beta;
      const Matrix d2 = d.g_betabeta + d.g_mubeta * z_beta.transpose() +
                        z_beta * d.g_mubeta.transpose() + d.g_mumu * z_beta * z_beta.transpose() +
                        d.g_mu * z_betabeta;
      mean_d1 += w * d1;
      second += w * (d2 + d1 * d1.transpose());
      const double z_tau = sens.mu_tau + kSqrt2 * x * sens.omega_tau;
      mean_dtau += w * (d.g_tau + d.g_mu * z_tau);
    }
    score = log_omega_beta + mean_d1;
    hessian = log_omega_betabeta + second - mean_d1 * mean_d1.transpose();
    dtau = log_omega_tau + mean_dtau;
  }

  const Vector mask = penalty_mask(p, options.penalize_intercept);
  loglik -= penalty_value(theta.beta, lambda, options.penalize_intercept);
  score -= 2.0 * lambda * mask.cwiseProduct(theta.beta);
  hessian.diagonal() -= 2.0 * lambda * mask;
  symmetrize(hessian);

  SiteSummary out;
  out.p = p;
  out.score = std::move(score);
  out.hessian = std::move(hessian);
  out.loglik = loglik;
  out.mu_hat = mu_hat;
  out.dtau = dtau;
  out.n_i = static_cast<std::int64_t>(site.n());
  out.beta_echo = theta.beta;
  out.lambda_echo = lambda;
  out.k_echo = method.order();
  return out;
}

}  // namespace fedglmm
