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

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "fedglmm/fedglmm.h"

namespace {

struct ConfigDeleter {
  void operator()(fg_config* c) const { fg_config_free(c); }
};
struct ResultDeleter {
  void operator()(fg_result* r) const { fg_result_free(r); }
};
using ConfigPtr = std::unique_ptr<fg_config, ConfigDeleter>;
using ResultPtr = std::unique_ptr<fg_result, ResultDeleter>;

// Settings that can come from the config file, --set, or a dedicated flag.
struct Settings {
  std::string config_file;
  std::vector<std::string> assignments;
  std::vector<std::pair<std::string, std::optional<std::string>>> flags;

  std::optional<std::string>& flag(const std::string& key) {
    for (auto& [k, v] : flags)
      if (k == key) return v;
    flags.emplace_back(key, std::nullopt);
    return flags.back().second;
  }
};

void add_setting(CLI::App* app, Settings& s, const std::string& option, const std::string& key,
                 const std::string& help) {
  s.flag(key);
  app->add_option_function<std::string>(option, [&s, key](const std::string& v) { s.flag(key) = v; }, help);
}

void add_model_settings(CLI::App* app, Settings& s) {
  add_setting(app, s, "--method", "method", "approximation: la or gh");
  add_setting(app, s, "--gh-order", "gh_order", "Gauss-Hermite nodes");
  add_setting(app, s, "--lambda", "lambda", "ridge penalty, or 'auto' to select on a validation split");
  add_setting(app, s, "--lambda-grid", "lambda_grid", "comma separated candidates for --lambda auto");
  add_setting(app, s, "--split-ratio", "split_ratio", "training fraction for --lambda auto");
  add_setting(app, s, "--split-seed", "split_seed", "seed of the train/validation split");
  add_setting(app, s, "--theta-tol", "theta_tol", "convergence threshold on the parameter step");
  add_setting(app, s, "--mu-tol", "mu_tol", "accuracy of the per-site mode search");
  add_setting(app, s, "--max-iter", "max_outer_iters", "outer iteration limit");
  add_setting(app, s, "--round-timeout", "round_timeout", "seconds to wait for a network round");
}

int report(fg_status st) {
  if (st != FG_OK) {
    const char* msg = fg_last_error();
    std::cerr << "fedglmm: " << fg_status_name(st) << (*msg ? ": " : "") << msg << "\n";
  }
  return static_cast<int>(st);
}

fg_status build_config(Settings& s, ConfigPtr& out) {
  out.reset(fg_config_new());
  if (!out) return FG_ERR_INTERNAL;
  if (!s.config_file.empty()) {
    if (auto st = fg_config_load_file(out.get(), s.config_file.c_str()); st != FG_OK) return st;
  }
  for (const auto& a : s.assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) {
      std::cerr << "fedglmm: usage error: --set expects key=value, got '" << a << "'\n";
      return FG_ERR_USAGE;
    }
    if (auto st = fg_config_set(out.get(), a.substr(0, eq).c_str(), a.substr(eq + 1).c_str()); st != FG_OK)
      return st;
  }
  for (const auto& [k, v] : s.flags)
    if (v)
      if (auto st = fg_config_set(out.get(), k.c_str(), v->c_str()); st != FG_OK) return st;
  return FG_OK;
}

void print_fit(const fg_result* r, const std::string& prefix) {
  std::printf("%s after %d iterations (final step %.3g); lambda = %g, tau = %.6g, loglik = %.6f\n",
              fg_result_converged(r) ? "converged" : "NOT converged", fg_result_iterations(r),
              fg_result_final_delta(r), fg_result_lambda(r), fg_result_tau(r), fg_result_loglik(r));
  std::printf("results: %s.result\n", prefix.c_str());
}

extern "C" void on_signal(int) { fg_cancel(); }

void install_signal_handlers() {
  struct sigaction sa {};
  sa.sa_handler = on_signal;
  sigemptyset(&sa.sa_mask);
  sa.sa_flags = 0;  // no SA_RESTART: blocking calls return promptly
  sigaction(SIGINT, &sa, nullptr);
  sigaction(SIGTERM, &sa, nullptr);
  std::signal(SIGPIPE, SIG_IGN);
}

void on_listening(uint16_t port, void*) {
  std::printf("listening on port %u\n", static_cast<unsigned>(port));
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated random-intercept logistic regression"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(fg_version()));

  Settings settings;
  bool force = false;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", settings.config_file, "key = value settings file")->check(CLI::ExistingFile);
    sub->add_option("--set", settings.assignments, "override one setting (key=value), repeatable");
  };

  auto* gen = app.add_subcommand("generate", "simulate the datasets of one setting");
  int setting_id = 0;
  std::string gen_dir = "data";
  gen->add_option("--setting", setting_id, "setting 1..8")->required();
  gen->add_option("--out-dir", gen_dir, "output directory")->capture_default_str();
  gen->add_flag("--force", force, "overwrite existing files");
  add_setting(gen, settings, "--seed", "seed", "generator seed");
  add_setting(gen, settings, "--num-datasets", "num_datasets", "datasets per setting");
  common(gen);

  auto* fitc = app.add_subcommand("fit", "fit a data file in-process");
  std::string data_path, out_prefix;
  fitc->add_option("--data", data_path, "CSV with header site_id,y,x1,...,xp")->required();
  fitc->add_option("--out", out_prefix, "output prefix")->required();
  fitc->add_flag("--force", force, "overwrite existing files");
  add_setting(fitc, settings, "--centralized", "centralized", "true: pool all rows into one site");
  add_model_settings(fitc, settings);
  common(fitc);

  auto* serve = app.add_subcommand("serve-site", "serve one site's data to a coordinator");
  std::string endpoint;
  std::string site_out;
  int64_t site_id = -1;
  serve->add_option("--data", data_path, "site CSV")->required();
  serve->add_option("--connect", endpoint, "coordinator host:port")->required();
  serve->add_option("--site-id", site_id, "serve only this site from a multi-site file");
  serve->add_option("--out", site_out, "write the received result here");
  serve->add_flag("--force", force, "overwrite existing files");
  add_setting(serve, settings, "--mu-tol", "mu_tol", "accuracy of the mode search");
  add_setting(serve, settings, "--round-timeout", "round_timeout", "seconds to wait for the coordinator");
  common(serve);

  auto* coord = app.add_subcommand("coordinate", "run the coordinator for a federated fit");
  int expected = 0;
  std::string dataset_label;
  coord->add_option("--listen", endpoint, "host:port to bind (port 0 picks one)")->required();
  coord->add_option("--sites", expected, "number of sites to wait for")->required();
  coord->add_option("--out", out_prefix, "output prefix")->required();
  coord->add_option("--dataset", dataset_label, "dataset name recorded for evaluate");
  coord->add_flag("--force", force, "overwrite existing files");
  add_model_settings(coord, settings);
  common(coord);

  auto* eval = app.add_subcommand("evaluate", "compare fitted results with the simulation truth");
  std::vector<std::string> results;
  std::string truth_dir, eval_dir;
  eval->add_option("--results", results, ".result files or glob patterns")->required();
  eval->add_option("--truth-dir", truth_dir, "directory written by generate")->required();
  eval->add_option("--out-dir", eval_dir, "output directory")->required();
  eval->add_flag("--force", force, "overwrite existing files");
  add_setting(eval, settings, "--alpha", "alpha", "significance level");
  add_setting(eval, settings, "--alpha-grid", "alpha_grid", "levels for the power curves");
  common(eval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return FG_ERR_USAGE;
  }

  ConfigPtr cfg;
  if (auto st = build_config(settings, cfg); st != FG_OK) return report(st);
  install_signal_handlers();

  if (gen->parsed()) {
    const auto st = fg_generate(cfg.get(), setting_id, gen_dir.c_str(), force);
    if (st == FG_OK) std::printf("wrote setting %d to %s\n", setting_id, gen_dir.c_str());
    return report(st);
  }
  if (fitc->parsed()) {
    fg_result* raw = nullptr;
    const auto st = fg_fit_file(cfg.get(), data_path.c_str(), out_prefix.c_str(), force, &raw);
    ResultPtr r(raw);
    if (r) print_fit(r.get(), out_prefix);
    return report(st);
  }
  if (serve->parsed()) {
    const auto st = fg_serve_site(cfg.get(), data_path.c_str(), endpoint.c_str(), site_id,
                                  site_out.empty() ? nullptr : site_out.c_str(), force);
    if (st == FG_OK) std::printf("session finished\n");
    return report(st);
  }
  if (coord->parsed()) {
    fg_result* raw = nullptr;
    const auto st = fg_coordinate(cfg.get(), endpoint.c_str(), expected, out_prefix.c_str(), force,
                                  dataset_label.empty() ? nullptr : dataset_label.c_str(), on_listening, nullptr, &raw);
    ResultPtr r(raw);
    if (r) print_fit(r.get(), out_prefix);
    return report(st);
  }
  if (eval->parsed()) {
    std::vector<const char*> ptrs;
    for (const auto& s : results) ptrs.push_back(s.c_str());
    const auto st = fg_evaluate(cfg.get(), ptrs.data(), ptrs.size(), truth_dir.c_str(), eval_dir.c_str(), force);
    if (st == FG_OK) std::printf("metrics written to %s\n", eval_dir.c_str());
    return report(st);
  }
  return FG_ERR_USAGE;
}
