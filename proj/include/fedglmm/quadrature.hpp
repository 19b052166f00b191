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

#ifndef FEDGLMM_QUADRATURE_HPP
#define FEDGLMM_QUADRATURE_HPP

#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedglmm/model.hpp"

namespace fedglmm {

class QuadratureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kMaxHermitePolynomialOrder = 50;
inline constexpr int kMaxHermiteRuleOrder = 20;

// Physicists' Hermite polynomial H_k(x) by three-term recurrence.
double hermite_polynomial(int k, double x);

// Gauss-Hermite rule for the weight e^{-x^2}. Nodes ascend and are exactly
// antisymmetric; weights are exactly symmetric.
struct HermiteRule {
  int order = 0;
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<double> log_weights;
};

HermiteRule hermite_rule(int order);

// a + log(sum exp(v - a)) with a = max(v). Throws on empty input.
double log_sum_exp(std::span<const double> values);

// log of the Laplace approximation to \int e^{g(mu)} dmu, given g and g''
// at the mode.
double log_laplace(double g_at_mode, double g_mumu_at_mode);

// log of the adaptive Gauss-Hermite approximation
//   sqrt(2) w sum_k h_k exp(g(m + sqrt(2) w x_k) + x_k^2)
// with m the mode of g and w = sqrt(-1/g''(m)).
double log_adaptive_gauss_hermite(const std::function<double(double)>& g, double mode,
                                  double omega, const HermiteRule& rule);

// Site-level wrappers; `mode` must be the maximiser of g for (site, theta).
double log_marginal_la(const SiteData& site, const Theta& theta, const RandomEffectMode& mode);
double log_marginal_gh(const SiteData& site, const Theta& theta, const RandomEffectMode& mode,
                       const HermiteRule& rule);

}  // namespace fedglmm

#endif  // FEDGLMM_QUADRATURE_HPP
