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

#include "fedglmm/coordinator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "fedglmm/random.hpp"

namespace fedglmm {

namespace {

constexpr double kAscentSlack = 1e-9;
constexpr double kSingularRatio = 1e-10;
constexpr double kTauArmijo = 0.5;
constexpr double kTauMaxLogStep = 3.0;
constexpr int kTauMaxHalvings = 20;

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

void aggregate(const std::vector<SiteSummary>& summaries, Vector& score, Matrix& hessian) {
  if (summaries.empty()) throw FitError("no site summaries to aggregate");
  const auto p = summaries.front().score.size();
  score = Vector::Zero(p);
  hessian = Matrix::Zero(p, p);
  for (const auto& s : summaries) {
    if (s.score.size() != p || s.hessian.rows() != p || s.hessian.cols() != p)
      throw FitError("site summaries disagree on p");
    score += s.score;
    hessian += s.hessian;
  }
}

double sum_dtau(const std::vector<SiteSummary>& summaries) {
  double d = 0.0;
  for (const auto& s : summaries) d += s.dtau;
  return d;
}

double max_abs_diff(const Theta& a, const Theta& b) {
  double d = (a.beta - b.beta).cwiseAbs().maxCoeff();
  return std::max(d, std::abs(a.tau - b.tau));
}

std::vector<double> mus(const std::vector<SiteSummary>& summaries) {
  std::vector<double> out;
  out.reserve(summaries.size());
  for (const auto& s : summaries) out.push_back(s.mu_hat);
  return out;
}

std::int64_t total_n(const std::vector<SiteSummary>& summaries) {
  std::int64_t n = 0;
  for (const auto& s : summaries) n += s.n_i;
  return n;
}

// Unpenalised log-likelihood from penalised site values.
double unpenalised(const std::vector<SiteSummary>& summaries, const Vector& beta, double lambda,
                   bool penalize_intercept) {
  double l = 0.0;
  for (const auto& s : summaries) l += s.loglik + penalty_value(beta, lambda, penalize_intercept);
  return l;
}

struct LambdaRun {
  Theta theta;
  std::vector<SiteSummary> summaries;
  int iterations = 0;
  bool converged = false;
  double final_delta = 0.0;
};

LambdaRun run_lambda(SummaryProvider& provider, const Theta& start, double lambda, bool freeze_tau,
                     const ConvergenceConfig& cfg, std::vector<TrajectoryEntry>& trajectory) {
  const RoundEvaluator evaluate = [&](const Theta& t) {
    return provider.collect(Partition::Train, t);
  };
  LambdaRun run;
  run.theta = start;
  run.summaries = evaluate(run.theta);
  int round = 1;
  while (run.iterations < cfg.max_outer_iters) {
    ++run.iterations;
    const Theta before = run.theta;
    NewtonStep ns = global_newton_step(run.summaries, run.theta, cfg, evaluate, round);
    Theta next = ns.theta;
    std::vector<SiteSummary> next_summaries = std::move(ns.summaries);
    if (!freeze_tau) {
      TauStep ts = update_tau(next_summaries, next, evaluate);
      next = ts.theta;
      next_summaries = std::move(ts.summaries);
    }
    run.theta = next;
    run.summaries = std::move(next_summaries);
    run.final_delta = max_abs_diff(before, run.theta);
    ++round;

    TrajectoryEntry e;
    e.lambda = lambda;
    e.iteration = run.iterations;
    e.beta = run.theta.beta;
    e.tau = run.theta.tau;
    e.delta_inf = run.final_delta;
    e.loglik = summed_loglik(run.summaries);
    e.damping = ns.damping;
    e.damping_engaged = ns.damping_engaged;
    trajectory.push_back(std::move(e));

    if (run.final_delta < cfg.theta_tol) {
      run.converged = true;
      break;
    }
  }
  return run;
}

bool better(const LambdaCandidate& a, const LambdaCandidate& b) {
  if (a.validation_aic != b.validation_aic) return a.validation_aic < b.validation_aic;
  if (a.validation_bic != b.validation_bic) return a.validation_bic < b.validation_bic;
  return a.lambda < b.lambda;
}

}  // namespace

void ConvergenceConfig::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(theta_tol) || !positive(mu_tol) || !positive(damping_init) || !positive(damping_cap))
    throw std::invalid_argument("convergence tolerances and damping bounds must be positive");
  if (max_outer_iters < 1 || max_newton_iters < 1)
    throw std::invalid_argument("iteration limits must be positive");
  if (!(damping_growth > 1.0) || !std::isfinite(damping_growth))
    throw std::invalid_argument("damping_growth must exceed 1");
}

ModeOptions mode_options(const ConvergenceConfig& cfg) {
  ModeOptions m;
  m.max_newton_iters = cfg.max_newton_iters;
  m.mu_tol = cfg.mu_tol;
  return m;
}

double summed_loglik(const std::vector<SiteSummary>& summaries) {
  double l = 0.0;
  for (const auto& s : summaries) l += s.loglik;
  return l;
}

bool numerically_singular(const Matrix& neg_hessian) {
  if (neg_hessian.size() == 0) return true;
  if (!neg_hessian.allFinite()) return true;
  Eigen::SelfAdjointEigenSolver<Matrix> es(neg_hessian, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) return true;
  const Vector& ev = es.eigenvalues();
  const double scale = ev.cwiseAbs().maxCoeff();
  if (!(scale > 0.0)) return true;
  return ev.minCoeff() <= kSingularRatio * scale;
}

NewtonStep global_newton_step(const std::vector<SiteSummary>& summaries, const Theta& theta,
                              const ConvergenceConfig& cfg, const RoundEvaluator& evaluate,
                              int round) {
  Vector score;
  Matrix hessian;
  aggregate(summaries, score, hessian);
  if (score.size() != theta.beta.size()) throw FitError("summary dimension does not match beta");
  const double l0 = summed_loglik(summaries);
  const Matrix neg_h = -hessian;
  const auto p = score.size();

  double delta = 0.0;
  bool engaged = false;
  for (;;) {
    Vector step;
    bool solved = false;
    if (delta == 0.0) {
      if (!numerically_singular(neg_h)) {
        Eigen::LLT<Matrix> llt(neg_h);
        if (llt.info() == Eigen::Success) {
          step = llt.solve(score);
          solved = step.allFinite();
        }
      }
    } else {
      Eigen::LLT<Matrix> llt(neg_h + delta * Matrix::Identity(p, p));
      if (llt.info() == Eigen::Success) {
        step = llt.solve(score);
        solved = step.allFinite();
      }
    }
    if (solved) {
      Theta trial{theta.beta + step, theta.tau};
      auto trial_summaries = evaluate(trial);
      const double l1 = summed_loglik(trial_summaries);
      if (std::isfinite(l1) && l1 >= l0 - kAscentSlack)
        return NewtonStep{std::move(trial), std::move(trial_summaries), delta, engaged};
    }
    engaged = true;
    delta = std::max(cfg.damping_init, cfg.damping_growth * delta);
    if (delta > cfg.damping_cap) {
      std::ostringstream msg;
      msg << "damping cap " << cfg.damping_cap << " exceeded in round " << round;
      throw FitError(msg.str());
    }
  }
}

TauStep update_tau(const std::vector<SiteSummary>& summaries, const Theta& theta,
                   const RoundEvaluator& evaluate) {
  const double grad = theta.tau * sum_dtau(summaries);  // d loglik / d log tau
  if (grad == 0.0 || !std::isfinite(grad)) return TauStep{theta, summaries};
  const double l0 = summed_loglik(summaries);
  double eta = std::min(1.0, kTauMaxLogStep / std::abs(grad));
  for (int h = 0; h <= kTauMaxHalvings; ++h, eta *= 0.5) {
    const double tau = theta.tau * std::exp(eta * grad);
    if (!(tau > 0.0) || !std::isfinite(tau) || tau == theta.tau) continue;
    Theta trial{theta.beta, tau};
    std::vector<SiteSummary> trial_summaries;
    try {
      trial_summaries = evaluate(trial);
    } catch (const ModeError&) {
      continue;
    }
    const double l1 = summed_loglik(trial_summaries);
    if (std::isfinite(l1) && l1 - l0 >= kTauArmijo * eta * grad * grad)
      return TauStep{std::move(trial), std::move(trial_summaries)};
  }
  return TauStep{theta, summaries};
}

FitResult fit(SummaryProvider& provider, const ModelConfig& model, const ConvergenceConfig& cfg) {
  cfg.validate();
  model.method.validate();
  const bool sweep = !model.lambda.has_value();
  std::vector<double> grid = sweep ? model.lambda_grid : std::vector<double>{*model.lambda};
  if (grid.empty()) throw std::invalid_argument("empty lambda grid");
  for (double l : grid)
    if (!(l >= 0.0) || !std::isfinite(l)) throw std::invalid_argument("lambda must be non-negative");
  if (sweep && !(model.split_ratio > 0.0 && model.split_ratio < 1.0))
    throw std::invalid_argument("split ratio must lie in (0, 1) for a lambda sweep");
  if (model.fixed_tau && !(*model.fixed_tau > 0.0))
    throw std::invalid_argument("fixed tau must be positive");
  if (!(model.initial_tau > 0.0)) throw std::invalid_argument("initial tau must be positive");

  SessionConfig session;
  session.method = model.method;
  session.penalize_intercept = model.penalize_intercept;
  session.split_ratio = sweep ? model.split_ratio : 1.0;
  session.split_seed = model.split_seed;

  FitResult result;
  struct Finished {
    LambdaCandidate cand;
    LambdaRun run;
  };
  std::vector<Finished> finished;
  std::optional<Theta> warm;

  for (double lambda : grid) {
    session.lambda = lambda;
    LambdaCandidate cand;
    cand.lambda = lambda;
    try {
      provider.configure(session);
      Theta start = warm ? *warm : Theta{Vector::Zero(provider.num_params()), model.initial_tau};
      if (model.fixed_tau) start.tau = *model.fixed_tau;
      LambdaRun run = run_lambda(provider, start, lambda, model.fixed_tau.has_value(), cfg,
                                 result.trajectory);
      cand.finished = true;
      cand.converged = run.converged;
      cand.iterations = run.iterations;
      cand.train_loglik = unpenalised(run.summaries, run.theta.beta, lambda, model.penalize_intercept);
      const std::int64_t k = run.theta.beta.size() + 1;
      if (sweep) {
        auto val = provider.collect(Partition::Validation, run.theta);
        cand.validation_loglik = unpenalised(val, run.theta.beta, lambda, model.penalize_intercept);
        const auto ic = information_criteria(cand.validation_loglik, k, std::max<std::int64_t>(1, total_n(val)));
        cand.validation_aic = ic.aic;
        cand.validation_bic = ic.bic;
      } else {
        cand.validation_loglik = cand.validation_aic = cand.validation_bic = nan();
      }
      if (run.converged) warm = run.theta;
      finished.push_back({cand, std::move(run)});
    } catch (const FitError& e) {
      cand.error = e.what();
    } catch (const ModeError& e) {
      cand.error = e.what();
    }
    result.candidates.push_back(cand);
  }
  if (finished.empty()) {
    std::string why = "all lambda candidates failed";
    if (!result.candidates.empty() && !result.candidates.back().error.empty())
      why += ": " + result.candidates.back().error;
    throw FitError(why);
  }

  // Prefer converged candidates; fall back to the best unconverged one.
  const Finished* best = nullptr;
  for (bool need_converged : {true, false}) {
    for (const auto& f : finished) {
      if (need_converged && !f.cand.converged) continue;
      if (!best || better(f.cand, best->cand)) best = &f;
    }
    if (best) break;
  }

  const auto& run = best->run;
  const std::int64_t k = run.theta.beta.size() + 1;
  result.beta_hat = run.theta.beta;
  result.tau_hat = run.theta.tau;
  result.mu_hats = mus(run.summaries);
  result.site_ids = provider.site_ids();
  result.lambda_hat = best->cand.lambda;
  result.loglik = best->cand.train_loglik;
  result.n_train = total_n(run.summaries);
  const auto ic = information_criteria(result.loglik, k, std::max<std::int64_t>(1, result.n_train));
  result.aic = ic.aic;
  result.bic = ic.bic;
  result.validation_loglik = best->cand.validation_loglik;
  result.validation_aic = best->cand.validation_aic;
  result.validation_bic = best->cand.validation_bic;
  result.iterations = run.iterations;
  result.converged = run.converged;
  result.final_delta = run.final_delta;
  if (sweep) {
    provider.configure(SessionConfig{session.method, best->cand.lambda, session.penalize_intercept,
                                     session.split_ratio, session.split_seed});
    result.n_validation = total_n(provider.collect(Partition::Validation, run.theta));
  }

  Vector score;
  aggregate(run.summaries, score, result.hessian);
  try {
    auto w = wald_inference(result.beta_hat, result.hessian);
    result.std_err = std::move(w.std_err);
    result.z = std::move(w.z);
    result.p_values = std::move(w.p_values);
    result.ci_low = std::move(w.ci_low);
    result.ci_high = std::move(w.ci_high);
    result.inference_available = true;
  } catch (const InferenceError&) {
    const auto p = result.beta_hat.size();
    result.std_err = result.z = result.p_values = result.ci_low = result.ci_high =
        Vector::Constant(p, nan());
    result.inference_available = false;
  }
  provider.publish(result);
  return result;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

WaldInference wald_inference(const Vector& beta_hat, const Matrix& aggregated_hessian) {
  const auto p = beta_hat.size();
  if (aggregated_hessian.rows() != p || aggregated_hessian.cols() != p)
    throw InferenceError("Hessian dimension does not match beta");
  const Matrix neg_h = -aggregated_hessian;
  if (numerically_singular(neg_h)) throw InferenceError("negative Hessian is not invertible");
  Eigen::LLT<Matrix> llt(neg_h);
  if (llt.info() != Eigen::Success) throw InferenceError("negative Hessian is not positive definite");
  const Matrix cov = llt.solve(Matrix::Identity(p, p));
  WaldInference w;
  w.std_err = cov.diagonal().cwiseSqrt();
  w.z = beta_hat.cwiseQuotient(w.std_err);
  w.p_values.resize(p);
  for (Eigen::Index j = 0; j < p; ++j)
    w.p_values[j] = std::clamp(std::erfc(std::abs(w.z[j]) / std::sqrt(2.0)), 0.0, 1.0);
  w.ci_low = beta_hat - kWaldCritical * w.std_err;
  w.ci_high = beta_hat + kWaldCritical * w.std_err;
  return w;
}

InformationCriteria information_criteria(double loglik, std::int64_t k, std::int64_t n) {
  if (k < 1 || n < 1) throw std::invalid_argument("information criteria need k >= 1 and N >= 1");
  const double kd = static_cast<double>(k);
  return {-2.0 * loglik + 2.0 * kd, -2.0 * loglik + kd * std::log(static_cast<double>(n))};
}

SplitResult train_validation_split(const std::vector<SiteData>& data, double ratio,
                                   std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must lie in (0, 1)");
  SplitResult out;
  for (const auto& site : data) {
    const auto n = site.n();
    if (n < 2) {
      out.train.push_back(site);
      out.validation.push_back(SiteData{site.site_id, Matrix(0, site.p()), Vector(0)});
      out.warnings.push_back("site " + std::to_string(site.site_id) +
                             " has fewer than 2 rows; kept whole in training");
      continue;
    }
    std::vector<Eigen::Index> pos, neg;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i)
      (site.y[i] > 0.5 ? pos : neg).push_back(i);

    // Largest-remainder allocation of the training count across strata.
    const auto n_train_total = std::clamp<std::int64_t>(
        std::llround(ratio * static_cast<double>(n)), 1, static_cast<std::int64_t>(n) - 1);
    const double exact_pos = static_cast<double>(n_train_total) * pos.size() / n;
    auto take_pos = static_cast<std::int64_t>(std::floor(exact_pos));
    auto take_neg = static_cast<std::int64_t>(std::floor(static_cast<double>(n_train_total) - exact_pos));
    while (take_pos + take_neg < n_train_total) {
      const double rp = exact_pos - take_pos;
      const double rn = (n_train_total - exact_pos) - take_neg;
      if ((rp >= rn && take_pos < static_cast<std::int64_t>(pos.size())) ||
          take_neg >= static_cast<std::int64_t>(neg.size()))
        ++take_pos;
      else
        ++take_neg;
    }

    CounterRng rng(derive_key({seed, static_cast<std::uint64_t>(site.site_id), 0x5917ULL}));
    auto shuffle = [&](std::vector<Eigen::Index>& v) {
      for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
    };
    shuffle(pos);
    shuffle(neg);
    std::vector<Eigen::Index> tr(pos.begin(), pos.begin() + take_pos);
    tr.insert(tr.end(), neg.begin(), neg.begin() + take_neg);
    std::vector<Eigen::Index> va(pos.begin() + take_pos, pos.end());
    va.insert(va.end(), neg.begin() + take_neg, neg.end());
    std::sort(tr.begin(), tr.end());
    std::sort(va.begin(), va.end());
    auto pick = [&](const std::vector<Eigen::Index>& rows) {
      SiteData s{site.site_id, Matrix(rows.size(), site.p()), Vector(rows.size())};
      for (std::size_t r = 0; r < rows.size(); ++r) {
        s.x.row(r) = site.x.row(rows[r]);
        s.y[r] = site.y[rows[r]];
      }
      return s;
    };
    out.train.push_back(pick(tr));
    out.validation.push_back(pick(va));
  }
  return out;
}

}  // namespace fedglmm
