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

#include <cmath>
#include <random>

#include "doctest.h"
#include "fedglmm/coordinator.hpp"
#include "fedglmm/transport.hpp"
#include "oracles.hpp"

using namespace fedglmm;

namespace {

// Quadratic objective -(b - t)' A (b - t) reported as a single-site summary.
SiteSummary quadratic_summary(const Matrix& a, const Vector& t, const Vector& beta) {
  SiteSummary s;
  s.p = beta.size();
  const Vector d = beta - t;
  s.loglik = -d.dot(a * d);
  s.score = -2.0 * a * d;
  s.hessian = -2.0 * a;
  s.n_i = 1;
  s.beta_echo = beta;
  return s;
}

ModelConfig fixed_lambda_config(double lambda, int k = 2) {
  ModelConfig m;
  m.method = ApproximationMethod::gauss_hermite(k);
  m.lambda = lambda;
  return m;
}

}  // namespace

TEST_CASE("information criteria") {
  auto ic = information_criteria(-13562.9, 20, 46312);
  CHECK(std::abs(ic.aic - 27165.8) < 0.05);
  CHECK(std::abs(ic.bic - 27340.7) < 0.05);
  CHECK(std::abs(ic.aic - 27165.9) < 0.2);
  CHECK(std::abs(ic.bic - 27340.8) < 0.2);
  auto one = information_criteria(0.0, 1, 1);
  CHECK(one.aic == 2.0);
  CHECK(one.bic == 0.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e4, 0);
  for (int i = 0; i < 50; ++i) {
    const double l = u(rng);
    const std::int64_t k = 1 + i, n = 10 + 37 * i;
    auto r = information_criteria(l, k, n);
    CHECK(std::abs((r.bic - r.aic) - k * (std::log(double(n)) - 2.0)) < 1e-9);
  }
  CHECK_THROWS(information_criteria(0.0, 0, 1));
  CHECK_THROWS(information_criteria(0.0, 1, 0));
}

TEST_CASE("wald inference") {
  Vector b(2);
  b << 1.959964, 0.0;
  auto w = wald_inference(b, -Matrix::Identity(2, 2));
  CHECK(w.p_values[0] == doctest::Approx(0.05).epsilon(1e-6));
  CHECK(w.ci_low[0] == doctest::Approx(0.0).scale(1));
  CHECK(w.ci_high[0] == doctest::Approx(3.919928));
  CHECK(w.p_values[1] == 1.0);
  CHECK(w.z[1] == 0.0);
  CHECK(normal_cdf(1.644854) == doctest::Approx(0.95).epsilon(1e-6));
  for (double x = -6.0; x <= 6.0; x += 0.25)
    CHECK(std::abs(normal_cdf(x) - oracle::normal_cdf_series(x)) < 1e-12);
  Matrix h(2, 2);
  h << -4, 1, 1, -2;
  auto w2 = wald_inference(b, h);
  const Matrix cov = (-h).inverse();
  CHECK(w2.std_err[0] == doctest::Approx(std::sqrt(cov(0, 0))));
  CHECK(w2.std_err[1] == doctest::Approx(std::sqrt(cov(1, 1))));
  CHECK((w2.ci_low.array() < w2.ci_high.array()).all());
  CHECK_THROWS_AS(wald_inference(b, Matrix::Zero(2, 2)), InferenceError);
  CHECK_THROWS_AS(wald_inference(b, Matrix::Identity(2, 2)), InferenceError);
}

TEST_CASE("newton step lands on the optimum of a quadratic") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  for (int rep = 0; rep < 20; ++rep) {
    const int p = 2 + rep % 4;
    Matrix r(p, p);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) r(i, j) = n01(rng);
    const Matrix a = r * r.transpose() + Matrix::Identity(p, p);
    Vector t(p);
    for (int i = 0; i < p; ++i) t[i] = n01(rng);
    Theta theta{Vector::Zero(p), 1.0};
    RoundEvaluator ev = [&](const Theta& th) {
      return std::vector<SiteSummary>{quadratic_summary(a, t, th.beta)};
    };
    auto step = global_newton_step(ev(theta), theta, ConvergenceConfig{}, ev);
    CHECK((step.theta.beta - t).cwiseAbs().maxCoeff() < 1e-10);
    CHECK_FALSE(step.damping_engaged);
    CHECK(step.damping == 0.0);
    CHECK(step.theta.tau == 1.0);
  }
}

TEST_CASE("newton step damps a zero Hessian") {
  Vector s(3);
  s << 1e-9, -2e-9, 0.5e-9;
  RoundEvaluator ev = [&](const Theta& th) {
    SiteSummary q;
    q.p = 3;
    q.score = s;
    q.hessian = Matrix::Zero(3, 3);
    q.loglik = s.dot(th.beta);
    q.n_i = 1;
    return std::vector<SiteSummary>{q};
  };
  Theta theta{Vector::Zero(3), 1.0};
  auto step = global_newton_step(ev(theta), theta, ConvergenceConfig{}, ev);
  CHECK(step.damping_engaged);
  CHECK(step.damping == doctest::Approx(1e-8));
  const Vector expect = s / step.damping;
  CHECK((step.theta.beta - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("newton step escalates until ascent and reports the cap") {
  // Objective falls off a cliff away from the origin: only tiny steps pass.
  RoundEvaluator ev = [&](const Theta& th) {
    SiteSummary q;
    q.p = 1;
    q.score = Vector::Constant(1, 1.0);
    q.hessian = Matrix::Constant(1, 1, -1.0);
    q.loglik = th.beta[0] < 1e-3 ? th.beta[0] : -1e9;
    q.n_i = 1;
    return std::vector<SiteSummary>{q};
  };
  Theta theta{Vector::Zero(1), 1.0};
  auto step = global_newton_step(ev(theta), theta, ConvergenceConfig{}, ev);
  CHECK(step.damping_engaged);
  CHECK(step.theta.beta[0] < 1e-3);
  CHECK(step.theta.beta[0] > 0.0);

  RoundEvaluator never = [&](const Theta& th) {
    auto s = ev(th);
    s[0].loglik = th.beta.isZero(0) ? 0.0 : -1.0;
    return s;
  };
  ConvergenceConfig small;
  small.damping_cap = 1e-4;
  try {
    global_newton_step(never(theta), theta, small, never, 7);
    FAIL("expected FitError");
  } catch (const FitError& e) {
    CHECK(std::string(e.what()).find("round 7") != std::string::npos);
  }
}

TEST_CASE("tau update direction and stationarity") {
  std::mt19937_64 rng(5);
  auto sites = oracle::random_glmm_sites(rng, 5, 60, Vector::Constant(2, 0.3), 1.0);
  const auto rule = hermite_rule(2);
  auto method = ApproximationMethod::gauss_hermite(2);
  RoundEvaluator ev = [&](const Theta& th) {
    std::vector<SiteSummary> out;
    for (auto& s : sites) out.push_back(site_summary(s, th, method, 0.0, rule));
    return out;
  };
  for (double tau : {0.05, 0.3, 1.0, 3.0, 10.0}) {
    Theta th{Vector::Constant(2, 0.3), tau};
    auto s0 = ev(th);
    double d = 0;
    for (auto& s : s0) d += s.dtau;
    auto next = update_tau(s0, th, ev);
    CHECK(next.theta.tau > 0.0);
    if (d > 0) CHECK(next.theta.tau >= tau);
    if (d < 0) CHECK(next.theta.tau <= tau);
    CHECK(summed_loglik(next.summaries) >= summed_loglik(s0) - 1e-9);
  }
  // Zero derivative leaves tau alone.
  std::vector<SiteSummary> flat(1);
  flat[0].dtau = 0.0;
  Theta th{Vector::Zero(1), 0.7};
  auto same = update_tau(flat, th, ev);
  CHECK(same.theta.tau == 0.7);
}

TEST_CASE("train validation split") {
  std::mt19937_64 rng(2);
  std::vector<SiteData> sites;
  for (int i = 0; i < 4; ++i) sites.push_back(oracle::random_site(rng, {3, 10}, i + 1));
  sites.push_back(oracle::random_site(rng, {3, 1}, 9));
  auto a = train_validation_split(sites, 0.7, 42);
  auto b = train_validation_split(sites, 0.7, 42);
  REQUIRE(a.train.size() == sites.size());
  REQUIRE(a.validation.size() == sites.size());
  CHECK(a.warnings.size() == 1);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.train[i].n() == 7);
    CHECK(a.validation[i].n() == 3);
    CHECK(a.train[i].x == b.train[i].x);
    CHECK(a.validation[i].y == b.validation[i].y);
    // Union is the original multiset of rows, stratified counts preserved.
    CHECK(a.train[i].y.sum() + a.validation[i].y.sum() == sites[i].y.sum());
    std::vector<std::vector<double>> orig, joined;
    for (Eigen::Index r = 0; r < sites[i].x.rows(); ++r) {
      std::vector<double> row(sites[i].x.row(r).data(), sites[i].x.row(r).data() + 0);
      for (Eigen::Index c = 0; c < sites[i].x.cols(); ++c) row.push_back(sites[i].x(r, c));
      row.push_back(sites[i].y[r]);
      orig.push_back(row);
    }
    for (const auto* part : {&a.train[i], &a.validation[i]})
      for (Eigen::Index r = 0; r < part->x.rows(); ++r) {
        std::vector<double> row;
        for (Eigen::Index c = 0; c < part->x.cols(); ++c) row.push_back(part->x(r, c));
        row.push_back(part->y[r]);
        joined.push_back(row);
      }
    std::sort(orig.begin(), orig.end());
    std::sort(joined.begin(), joined.end());
    CHECK(orig == joined);
    const double pos = sites[i].y.sum();
    CHECK(std::abs(a.train[i].y.sum() - 0.7 * pos) <= 1.0);
  }
  CHECK(a.train[4].n() == 1);
  CHECK(a.validation[4].n() == 0);
  auto c = train_validation_split(sites, 0.7, 43);
  bool differs = false;
  for (std::size_t i = 0; i < 4; ++i) differs = differs || !(c.train[i].x == a.train[i].x);
  CHECK(differs);
}

TEST_CASE("fit matches plain logistic regression when tau is frozen large") {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 3; ++rep) {
    Vector beta(4);
    beta << -0.5, 0.8, -0.4, 0.2;
    auto sites = oracle::random_glmm_sites(rng, 1, 5000, beta, 0.0);
    InProcessProvider provider(sites);
    ModelConfig m = fixed_lambda_config(0.0, 1);
    m.fixed_tau = 1e6;
    auto r = fit(provider, m, ConvergenceConfig{});
    const Vector glm = oracle::irls_logistic(sites[0].x, sites[0].y);
    CHECK(r.converged);
    for (int j = 1; j < 4; ++j) CHECK(std::abs(r.beta_hat[j] - glm[j]) < 1e-3);
    CHECK(std::abs(r.beta_hat[0] + r.mu_hats[0] - glm[0]) < 1e-3);
  }
}

TEST_CASE("fit recovers a random-intercept model and is deterministic") {
  std::mt19937_64 rng(21);
  Vector beta(3);
  beta << -0.7, 0.5, -0.3;
  auto sites = oracle::random_glmm_sites(rng, 10, 200, beta, 1.0);
  InProcessProvider p1(sites), p2(sites);
  auto m = fixed_lambda_config(0.0, 2);
  auto a = fit(p1, m, ConvergenceConfig{});
  auto b = fit(p2, m, ConvergenceConfig{});
  CHECK(a.converged);
  CHECK(a.final_delta < 1e-3);
  CHECK(a.tau_hat > 0.3);
  CHECK(a.tau_hat < 3.0);
  CHECK(a.inference_available);
  for (int j = 0; j < 3; ++j) CHECK(std::abs(a.beta_hat[j] - beta[j]) < 4 * a.std_err[j]);
  CHECK(a.beta_hat == b.beta_hat);
  CHECK(a.tau_hat == b.tau_hat);
  CHECK(a.trajectory.size() == b.trajectory.size());
  CHECK(a.mu_hats.size() == 10);
  CHECK(a.aic == doctest::Approx(-2 * a.loglik + 2 * 4));
  CHECK(a.bic == doctest::Approx(-2 * a.loglik + 4 * std::log(2000.0)));
  for (std::size_t i = 1; i < a.trajectory.size(); ++i)
    CHECK(a.trajectory[i].loglik >= a.trajectory[i - 1].loglik - 1e-9);

  // Site order does not matter.
  std::vector<SiteData> rev(sites.rbegin(), sites.rend());
  InProcessProvider p3(rev);
  auto c = fit(p3, m, ConvergenceConfig{});
  CHECK((c.beta_hat - a.beta_hat).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("lambda sweep selects on validation AIC") {
  std::mt19937_64 rng(33);
  Vector beta(4);
  beta << -0.4, 0.6, -0.5, 0.3;
  auto sites = oracle::random_glmm_sites(rng, 2, 500, beta, 0.5);
  InProcessProvider provider(sites);
  ModelConfig m;
  m.method = ApproximationMethod::gauss_hermite(2);
  auto r = fit(provider, m, ConvergenceConfig{});
  REQUIRE(r.candidates.size() == 11);
  CHECK(r.lambda_hat <= 1.0);
  CHECK(r.validation_aic <= r.candidates.back().validation_aic);
  CHECK(r.n_train + r.n_validation == 1000);
  CHECK(r.n_train == 700);
  for (const auto& c : r.candidates) CHECK(c.converged);
}

TEST_CASE("fit rejects bad configuration") {
  std::mt19937_64 rng(1);
  InProcessProvider provider({oracle::random_site(rng, {2, 20})});
  ModelConfig m = fixed_lambda_config(-1.0);
  CHECK_THROWS(fit(provider, m, ConvergenceConfig{}));
  ConvergenceConfig bad;
  bad.damping_growth = 1.0;
  CHECK_THROWS(fit(provider, fixed_lambda_config(0.0), bad));
}
