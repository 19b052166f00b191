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

#include "fedglmm/model.hpp"

#include <cmath>

namespace fedglmm {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

void fill_upper(Matrix& m) {
  Matrix full = m.selfadjointView<Eigen::Lower>();
  m = std::move(full);
}

double log_normal_density(double mu, double tau) {
  return -kHalfLog2Pi - std::log(tau) - 0.5 * (mu * mu) / (tau * tau);
}

}  // namespace

SiteData make_site(SiteId id, std::span<const ObservationRow> rows) {
  if (rows.empty()) throw ModelError("site " + std::to_string(id) + " has no rows");
  const std::size_t p = rows.front().covariates.size();
  if (p == 0) throw ModelError("site " + std::to_string(id) + ": empty covariate vector");
  SiteData site;
  site.site_id = id;
  site.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(p));
  site.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const auto& r = rows[j];
    if (r.covariates.size() != p)
      throw ModelError("site " + std::to_string(id) + ", row " + std::to_string(j) +
                       ": expected " + std::to_string(p) + " covariates");
    for (std::size_t c = 0; c < p; ++c)
      site.x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) = r.covariates[c];
    site.y(static_cast<Eigen::Index>(j)) = r.outcome;
  }
  validate_site(site);
  return site;
}

void validate_site(const SiteData& site, bool allow_empty) {
  const auto id = std::to_string(site.site_id);
  if (site.x.rows() != site.y.size()) throw ModelError("site " + id + ": x/y row mismatch");
  if (site.x.rows() == 0 && !allow_empty) throw ModelError("site " + id + " has no rows");
  if (site.x.cols() == 0) throw ModelError("site " + id + ": p must be at least 1");
  for (Eigen::Index j = 0; j < site.x.rows(); ++j) {
    if (site.x(j, 0) != 1.0)
      throw ModelError("site " + id + ", row " + std::to_string(j) + ": intercept column must be 1");
    const double y = site.y(j);
    if (y != 0.0 && y != 1.0)
      throw ModelError("site " + id + ", row " + std::to_string(j) + ": outcome must be 0 or 1");
    if (!site.x.row(j).allFinite())
      throw ModelError("site " + id + ", row " + std::to_string(j) + ": non-finite covariate");
  }
}

void validate_theta(const Theta& theta, std::size_t p) {
  if (static_cast<std::size_t>(theta.beta.size()) != p)
    throw ModelError("beta has length " + std::to_string(theta.beta.size()) + ", expected " +
                     std::to_string(p));
  if (!theta.beta.allFinite()) throw ModelError("beta has non-finite entries");
  if (!(theta.tau > 0.0) || !std::isfinite(theta.tau)) throw ModelError("tau must be positive and finite");
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

namespace detail {

double g_value(const SiteData& site, const Vector& xb, double tau, double mu) {
  double acc = 0.0;
  for (Eigen::Index j = 0; j < xb.size(); ++j) {
    const double eta = xb(j) + mu;
    acc += site.y(j) != 0.0 ? log_sigmoid(eta) : log_sigmoid(-eta);
  }
  return acc + log_normal_density(mu, tau);
}

GScalar g_scalar(const SiteData& site, const Vector& xb, double tau, double mu) {
  GScalar out;
  double resid = 0.0, info = 0.0;
  for (Eigen::Index j = 0; j < xb.size(); ++j) {
    const double eta = xb(j) + mu;
    const double pi = sigmoid(eta);
    const double one_minus_pi = sigmoid(-eta);
    out.value += site.y(j) != 0.0 ? log_sigmoid(eta) : log_sigmoid(-eta);
    resid += site.y(j) - pi;
    info += pi * one_minus_pi;
  }
  const double inv_var = 1.0 / (tau * tau);
  out.value += log_normal_density(mu, tau);
  out.g_mu = resid - mu * inv_var;
  out.g_mumu = -info - inv_var;
  return out;
}

GDerivs g_derivs(const SiteData& site, const Vector& xb, double tau, double mu) {
  const Eigen::Index p = site.x.cols();
  GDerivs d;
  d.g_beta = Vector::Zero(p);
  d.g_mubeta = Vector::Zero(p);
  d.g_betabeta = Matrix::Zero(p, p);
  double resid = 0.0, info = 0.0;
  for (Eigen::Index j = 0; j < xb.size(); ++j) {
    const double eta = xb(j) + mu;
    const double pi = sigmoid(eta);
    const double w = pi * sigmoid(-eta);
    const double r = site.y(j) - pi;
    resid += r;
    info += w;
    const auto xj = site.x.row(j).transpose();
    d.g_beta.noalias() += r * xj;
    d.g_mubeta.noalias() -= w * xj;
    d.g_betabeta.selfadjointView<Eigen::Lower>().rankUpdate(xj, -w);
  }
  fill_upper(d.g_betabeta);
  const double inv_var = 1.0 / (tau * tau);
  d.g_mu = resid - mu * inv_var;
  d.g_mumu = -info - inv_var;
  d.g_tau = mu * mu / (tau * tau * tau) - 1.0 / tau;
  return d;
}

GHigherDerivs g_higher_derivs(const SiteData& site, const Vector& xb, double mu) {
  const Eigen::Index p = site.x.cols();
  GHigherDerivs h;
  h.g_mumubeta = Vector::Zero(p);
  h.g_mumumubeta = Vector::Zero(p);
  h.g_mubetabeta = Matrix::Zero(p, p);
  h.g_mumubetabeta = Matrix::Zero(p, p);
  double t_sum = 0.0, s_sum = 0.0;
  for (Eigen::Index j = 0; j < xb.size(); ++j) {
    const double eta = xb(j) + mu;
    const double pi = sigmoid(eta);
    const double one_minus_pi = sigmoid(-eta);
    const double w = pi * one_minus_pi;
    // d w / d eta and d^2 w / d eta^2
    const double t = w * (one_minus_pi - pi);
    const double s = w * (1.0 - 6.0 * w);
    t_sum += t;
    s_sum += s;
    const auto xj = site.x.row(j).transpose();
    h.g_mumubeta.noalias() -= t * xj;
    h.g_mumumubeta.noalias() -= s * xj;
    h.g_mubetabeta.selfadjointView<Eigen::Lower>().rankUpdate(xj, -t);
    h.g_mumubetabeta.selfadjointView<Eigen::Lower>().rankUpdate(xj, -s);
  }
  fill_upper(h.g_mubetabeta);
  fill_upper(h.g_mumubetabeta);
  h.g_mumumu = -t_sum;
  h.g_mumumumu = -s_sum;
  return h;
}

}  // namespace detail

double g_value(const SiteData& site, const Theta& theta, double mu) {
  return detail::g_value(site, site.x * theta.beta, theta.tau, mu);
}

GScalar g_scalar(const SiteData& site, const Theta& theta, double mu) {
  return detail::g_scalar(site, site.x * theta.beta, theta.tau, mu);
}

GDerivs g_derivs(const SiteData& site, const Theta& theta, double mu) {
  return detail::g_derivs(site, site.x * theta.beta, theta.tau, mu);
}

GHigherDerivs g_higher_derivs(const SiteData& site, const Theta& theta, double mu) {
  return detail::g_higher_derivs(site, site.x * theta.beta, mu);
}

}  // namespace fedglmm
