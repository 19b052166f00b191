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

#include "fedglmm/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace fedglmm {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;
constexpr double kLogSqrt2 = 0.34657359027997265471;

// Returns (H_k(x), H_{k-1}(x)).
std::pair<double, double> hermite_pair(int k, double x) {
  double prev = 1.0;  // H_0
  if (k == 0) return {prev, 0.0};
  double cur = 2.0 * x;  // H_1
  for (int j = 1; j < k; ++j) {
    const double next = 2.0 * x * cur - 2.0 * j * prev;
    prev = cur;
    cur = next;
  }
  return {cur, prev};
}

// Root of H_k inside [lo, hi], where H_k changes sign. Newton steps that
// leave the bracket are replaced by bisection.
double bracketed_root(int k, double lo, double hi) {
  double f_lo = hermite_pair(k, lo).first;
  double f_hi = hermite_pair(k, hi).first;
  if (f_lo == 0.0) return lo;
  if (f_hi == 0.0) return hi;
  if ((f_lo < 0.0) == (f_hi < 0.0))
    throw QuadratureError("H_" + std::to_string(k) + " does not change sign on [" +
                          std::to_string(lo) + ", " + std::to_string(hi) + "]");
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const auto [h, h_prev] = hermite_pair(k, x);
    if (h == 0.0) return x;
    if ((h < 0.0) == (f_lo < 0.0)) {
      lo = x;
      f_lo = h;
    } else {
      hi = x;
    }
    const double deriv = 2.0 * k * h_prev;  // H_k' = 2k H_{k-1}
    double next = deriv != 0.0 ? x - h / deriv : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x)))
      return next;
    x = next;
  }
  throw QuadratureError("root finding for H_" + std::to_string(k) + " did not converge");
}

std::vector<double> hermite_roots(int k) {
  if (k == 1) return {0.0};
  // Roots of H_{k-1} interlace those of H_k.
  const auto inner = hermite_roots(k - 1);
  const double bound = std::sqrt(2.0 * k + 1.0);
  std::vector<double> roots;
  roots.reserve(static_cast<std::size_t>(k));
  double lo = -bound;
  for (double r : inner) {
    roots.push_back(bracketed_root(k, lo, r));
    lo = r;
  }
  roots.push_back(bracketed_root(k, lo, bound));
  return roots;
}

}  // namespace

double hermite_polynomial(int k, double x) {
  if (k < 0) throw QuadratureError("Hermite polynomial order must be non-negative");
  if (k > kMaxHermitePolynomialOrder)
    throw QuadratureError("Hermite polynomial order " + std::to_string(k) + " exceeds " +
                          std::to_string(kMaxHermitePolynomialOrder));
  return hermite_pair(k, x).first;
}

HermiteRule hermite_rule(int order) {
  if (order < 1 || order > kMaxHermiteRuleOrder)
    throw QuadratureError("Gauss-Hermite order must be in [1, " +
                          std::to_string(kMaxHermiteRuleOrder) + "], got " + std::to_string(order));
  HermiteRule rule;
  rule.order = order;
  rule.nodes = hermite_roots(order);
  const auto k = static_cast<std::size_t>(order);
  for (std::size_t i = 0; i < k / 2; ++i) {
    const double a = 0.5 * (rule.nodes[k - 1 - i] - rule.nodes[i]);
    rule.nodes[i] = -a;
    rule.nodes[k - 1 - i] = a;
  }
  if (k % 2 == 1) rule.nodes[k / 2] = 0.0;

  // h_k = 2^{K-1} K! sqrt(pi) / (K^2 H_{K-1}(x_k)^2), in log space.
  const double log_const = (order - 1) * std::log(2.0) + std::lgamma(order + 1.0) +
                           0.5 * std::log(M_PI) - 2.0 * std::log(static_cast<double>(order));
  rule.log_weights.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double h_prev = hermite_pair(order, rule.nodes[i]).second;
    rule.log_weights[i] = log_const - 2.0 * std::log(std::abs(h_prev));
  }
  for (std::size_t i = 0; i < k / 2; ++i) {
    const double a = 0.5 * (rule.log_weights[i] + rule.log_weights[k - 1 - i]);
    rule.log_weights[i] = a;
    rule.log_weights[k - 1 - i] = a;
  }
  rule.weights.resize(k);
  std::transform(rule.log_weights.begin(), rule.log_weights.end(), rule.weights.begin(),
                 [](double lw) { return std::exp(lw); });
  return rule;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw QuadratureError("log_sum_exp of an empty sequence");
  const double a = *std::max_element(values.begin(), values.end());
  if (std::isinf(a)) return a;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - a);
  return a + std::log(acc);
}

double log_laplace(double g_at_mode, double g_mumu_at_mode) {
  if (!(g_mumu_at_mode < 0.0))
    throw QuadratureError("second derivative at the mode is not negative; mode is invalid");
  return g_at_mode + kHalfLog2Pi - 0.5 * std::log(-g_mumu_at_mode);
}

double log_adaptive_gauss_hermite(const std::function<double(double)>& g, double mode,
                                  double omega, const HermiteRule& rule) {
  if (!(omega > 0.0) || !std::isfinite(omega))
    throw QuadratureError("omega_hat must be positive and finite; mode is invalid");
  const double scale = std::sqrt(2.0) * omega;
  std::vector<double> terms(rule.nodes.size());
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
    const double x = rule.nodes[k];
    terms[k] = rule.log_weights[k] + g(mode + scale * x) + x * x;
  }
  return kLogSqrt2 + std::log(omega) + log_sum_exp(terms);
}

double log_marginal_la(const SiteData& site, const Theta& theta, const RandomEffectMode& mode) {
  const auto s = g_scalar(site, theta, mode.mu_hat);
  return log_laplace(s.value, s.g_mumu);
}

double log_marginal_gh(const SiteData& site, const Theta& theta, const RandomEffectMode& mode,
                       const HermiteRule& rule) {
  const Vector xb = site.x * theta.beta;
  const double g_mumu = detail::g_scalar(site, xb, theta.tau, mode.mu_hat).g_mumu;
  if (!(g_mumu < 0.0)) throw QuadratureError("second derivative at the mode is not negative");
  return log_adaptive_gauss_hermite(
      [&](double mu) { return detail::g_value(site, xb, theta.tau, mu); }, mode.mu_hat,
      mode.omega_hat, rule);
}

}  // namespace fedglmm
