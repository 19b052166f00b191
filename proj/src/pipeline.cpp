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

#include "fedglmm/pipeline.hpp"

#include <glob.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "fedglmm/datagen.hpp"
#include "fedglmm/evaluation.hpp"
#include "fedglmm/log.hpp"
#include "fedglmm/transport.hpp"

namespace fedglmm {

namespace fs = std::filesystem;

namespace {

const char* const kFitSuffixes[] = {".result", ".coef.csv", ".sites.csv", ".trajectory.csv", ".candidates.csv"};

std::string fmt(double v) { return format_real(v); }

std::string flag(bool b) { return b ? "true" : "false"; }

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void refuse_existing(const std::vector<std::string>& paths, bool force) {
  if (force) return;
  for (const auto& p : paths)
    if (fs::exists(p)) throw OutputCollision(p + " already exists (use --force to overwrite)");
}

// Accepts the nan/inf spellings written by format_real.
double read_stored_real(const std::string& text, const std::string& where) {
  double v = 0;
  auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || r.ec != std::errc() || r.ptr != text.data() + text.size())
    throw DataError(where, 0, 0, "'" + text + "' is not a number");
  return v;
}

std::vector<std::vector<std::string>> read_rows(const std::string& path, const std::string& header) {
  const std::string text = read_file(path);
  std::vector<std::vector<std::string>> rows;
  std::size_t pos = 0, line = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string l = text.substr(pos, end - pos);
    pos = end + 1;
    if (++line == 1) {
      if (l != header) throw DataError(path, 1, 1, "header must be '" + header + "'");
      continue;
    }
    rows.push_back(split_csv_line(l));
    if (rows.back().size() != split_csv_line(header).size())
      throw DataError(path, line, 1, "wrong number of fields");
  }
  return rows;
}

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

bool has_glob_chars(const std::string& s) { return s.find_first_of("*?[") != std::string::npos; }

}  // namespace

std::vector<std::string> fit_output_paths(const std::string& prefix) {
  std::vector<std::string> out;
  for (const char* s : kFitSuffixes) out.push_back(prefix + s);
  return out;
}

std::string StoredFit::value(const std::string& key) const {
  for (const auto& [k, v] : manifest)
    if (k == key) return v;
  return "";
}

void write_fit_outputs(const FitResult& r, const RunConfig& cfg, const FitSource& prov,
                       const std::string& prefix, bool force) {
  const auto paths = fit_output_paths(prefix);
  refuse_existing(paths, force);
  ensure_parent(prefix);
  const auto p = r.beta_hat.size();

  std::string coef = "term,coef,std_err,z,p_value,ci_low,ci_high\n";
  for (Eigen::Index j = 0; j < p; ++j) {
    auto at = [&](const Vector& v) { return v.size() == p ? fmt(v[j]) : std::string("nan"); };
    coef += "x" + std::to_string(j + 1) + "," + fmt(r.beta_hat[j]) + "," + at(r.std_err) + "," + at(r.z) + "," +
            at(r.p_values) + "," + at(r.ci_low) + "," + at(r.ci_high) + "\n";
  }
  write_file(paths[1], coef);

  std::string sites = "site_id,mu_hat\n";
  for (std::size_t i = 0; i < r.site_ids.size(); ++i)
    sites += std::to_string(r.site_ids[i]) + "," + fmt(r.mu_hats[i]) + "\n";
  write_file(paths[2], sites);

  std::string traj = "lambda,iteration,tau,delta_inf,loglik,damping,damping_engaged";
  for (Eigen::Index j = 0; j < p; ++j) traj += ",beta" + std::to_string(j + 1);
  traj += "\n";
  for (const auto& t : r.trajectory) {
    traj += fmt(t.lambda) + "," + std::to_string(t.iteration) + "," + fmt(t.tau) + "," + fmt(t.delta_inf) + "," +
            fmt(t.loglik) + "," + fmt(t.damping) + "," + flag(t.damping_engaged);
    for (Eigen::Index j = 0; j < t.beta.size(); ++j) traj += "," + fmt(t.beta[j]);
    traj += "\n";
  }
  write_file(paths[3], traj);

  std::string cand = "lambda,finished,converged,iterations,train_loglik,validation_loglik,validation_aic,validation_bic,error\n";
  for (const auto& c : r.candidates)
    cand += fmt(c.lambda) + "," + flag(c.finished) + "," + flag(c.converged) + "," + std::to_string(c.iterations) +
            "," + fmt(c.train_loglik) + "," + fmt(c.validation_loglik) + "," + fmt(c.validation_aic) + "," +
            fmt(c.validation_bic) + "," + sanitize(c.error) + "\n";
  write_file(paths[4], cand);

  KeyValues m = {
      {"command", prov.command},
      {"dataset", prov.dataset},
      {"input", prov.input},
      {"input_digest", prov.input_digest},
      {"num_sites", std::to_string(prov.num_sites)},
      {"method", cfg.method_label()},
      {"converged", flag(r.converged)},
      {"iterations", std::to_string(r.iterations)},
      {"final_delta", fmt(r.final_delta)},
      {"lambda_hat", fmt(r.lambda_hat)},
      {"tau_hat", fmt(r.tau_hat)},
      {"loglik", fmt(r.loglik)},
      {"aic", fmt(r.aic)},
      {"bic", fmt(r.bic)},
      {"validation_loglik", fmt(r.validation_loglik)},
      {"validation_aic", fmt(r.validation_aic)},
      {"validation_bic", fmt(r.validation_bic)},
      {"n_train", std::to_string(r.n_train)},
      {"n_validation", std::to_string(r.n_validation)},
      {"inference_available", flag(r.inference_available)},
      {"config_hash", cfg.hash()},
  };
  for (const auto& k : RunConfig::known_keys()) m.emplace_back("config." + k, cfg.get(k));
  for (std::size_t i = 1; i < paths.size(); ++i) {
    const std::string name = std::string(kFitSuffixes[i]).substr(1);
    m.emplace_back("output." + name, fs::path(paths[i]).filename().string());
    m.emplace_back("digest." + name, file_digest(paths[i]));
  }
  write_file(paths[0], format_key_values(m));
}

StoredFit read_fit_outputs(const std::string& result_path) {
  StoredFit s;
  s.path = result_path;
  s.manifest = read_key_values(result_path);
  std::string prefix = result_path;
  if (prefix.size() > 7 && prefix.compare(prefix.size() - 7, 7, ".result") == 0) prefix.resize(prefix.size() - 7);

  const std::string coef_path = prefix + ".coef.csv";
  const auto rows = read_rows(coef_path, "term,coef,std_err,z,p_value,ci_low,ci_high");
  const auto p = static_cast<Eigen::Index>(rows.size());
  for (Vector* v : {&s.beta, &s.std_err, &s.z, &s.p_values, &s.ci_low, &s.ci_high}) v->resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto& r = rows[j];
    s.beta[j] = read_stored_real(r[1], coef_path);
    s.std_err[j] = read_stored_real(r[2], coef_path);
    s.z[j] = read_stored_real(r[3], coef_path);
    s.p_values[j] = read_stored_real(r[4], coef_path);
    s.ci_low[j] = read_stored_real(r[5], coef_path);
    s.ci_high[j] = read_stored_real(r[6], coef_path);
  }
  const std::string sites_path = prefix + ".sites.csv";
  for (const auto& r : read_rows(sites_path, "site_id,mu_hat")) {
    s.site_ids.push_back(static_cast<SiteId>(read_stored_real(r[0], sites_path)));
    s.mu_hats.push_back(read_stored_real(r[1], sites_path));
  }
  return s;
}

SiteData pool_sites(const std::vector<SiteData>& sites) {
  if (sites.empty()) throw UsageError("no sites to pool");
  Eigen::Index n = 0;
  for (const auto& s : sites) n += s.x.rows();
  SiteData out{0, Matrix(n, sites.front().x.cols()), Vector(n)};
  Eigen::Index r = 0;
  for (const auto& s : sites) {
    out.x.middleRows(r, s.x.rows()) = s.x;
    out.y.segment(r, s.y.size()) = s.y;
    r += s.x.rows();
  }
  return out;
}

std::vector<std::string> run_generate(const RunConfig& cfg, int setting_id, const std::string& out_dir,
                                      bool force) {
  if (setting_id < 1 || setting_id > 8) throw UsageError("setting must be 1..8, got " + std::to_string(setting_id));
  const GenSetting set = cfg.gen_setting(setting_id);
  const fs::path dir(out_dir);
  const std::string manifest = (dir / ("manifest_setting" + std::to_string(setting_id) + ".txt")).string();
  const std::string beta_path = (dir / "truth_beta.csv").string();

  std::vector<std::string> targets = {manifest};
  for (int i = 0; i < set.num_datasets; ++i) {
    const std::string data = (dir / (dataset_stem(setting_id, i) + ".csv")).string();
    targets.insert(targets.end(), {data, truth_sidecar_path(data), sites_sidecar_path(data)});
  }
  refuse_existing(targets, force);
  if (!force && fs::exists(beta_path)) {
    const Vector old = read_truth_beta(beta_path);
    if (old.size() != set.true_beta.size() || old != set.true_beta)
      throw OutputCollision(beta_path + " holds a different coefficient vector (use --force to overwrite)");
  }
  fs::create_directories(dir);
  write_truth_beta(beta_path, set.true_beta);

  KeyValues m = {{"command", "generate"},
                 {"setting_id", std::to_string(setting_id)},
                 {"num_sites", std::to_string(set.num_sites)},
                 {"site_size", std::to_string(set.site_size)},
                 {"variance_label", set.variance_label},
                 {"random_effect_sd", fmt(set.random_effect_sd)},
                 {"num_datasets", std::to_string(set.num_datasets)},
                 {"seed", std::to_string(set.seed)},
                 {"config_hash", cfg.hash()}};
  for (const auto& k : RunConfig::known_keys()) m.emplace_back("config." + k, cfg.get(k));
  std::vector<std::string> written = {beta_path};
  m.emplace_back("file.truth_beta", "truth_beta.csv " + file_digest(beta_path));
  for (int i = 0; i < set.num_datasets; ++i) {
    const auto ds = generate(set, i);
    const std::string data = write_dataset(ds, out_dir);
    for (const auto& f : {data, truth_sidecar_path(data), sites_sidecar_path(data)}) {
      written.push_back(f);
      m.emplace_back("file." + stem_of(f), fs::path(f).filename().string() + " " + file_digest(f));
    }
  }
  write_file(manifest, format_key_values(m));
  written.push_back(manifest);
  return written;
}

FitResult run_fit(const RunConfig& cfg, const std::string& data_path, const std::string& out_prefix, bool force) {
  refuse_existing(fit_output_paths(out_prefix), force);
  auto sites = load_sites(data_path);
  if (cfg.centralized()) sites = {pool_sites(sites)};
  const auto conv = cfg.convergence();
  InProcessProvider provider(sites, mode_options(conv));
  const FitResult r = fit(provider, cfg.model(), conv);
  FitSource prov{"fit", data_path, file_digest(data_path), stem_of(data_path),
                     static_cast<std::int64_t>(sites.size())};
  write_fit_outputs(r, cfg, prov, out_prefix, true);
  return r;
}

FitResult run_coordinate(const RunConfig& cfg, const CoordinateRequest& req) {
  if (req.expected_sites < 1) throw UsageError("--sites must be at least 1");
  refuse_existing(fit_output_paths(req.out_prefix), req.force);
  CoordinatorOptions opt;
  opt.listen = parse_endpoint(req.endpoint);
  opt.expected_sites = req.expected_sites;
  opt.model = cfg.model();
  opt.convergence = cfg.convergence();
  opt.round_timeout = cfg.round_timeout();
  opt.on_listening = req.on_listening;
  opt.cancel = req.cancel;
  const FitResult r = run_coordinator(opt);
  FitSource prov{"coordinate", "", "", req.dataset, req.expected_sites};
  write_fit_outputs(r, cfg, prov, req.out_prefix, true);
  return r;
}

SiteSessionLog run_serve_site(const RunConfig& cfg, const ServeRequest& req) {
  if (!req.out_path.empty()) refuse_existing({req.out_path}, req.force);
  auto sites = load_sites(req.data_path);
  SiteData site;
  if (req.site_id) {
    auto it = std::find_if(sites.begin(), sites.end(), [&](const SiteData& s) { return s.site_id == *req.site_id; });
    if (it == sites.end())
      throw UsageError(req.data_path + " has no rows for site " + std::to_string(*req.site_id));
    site = std::move(*it);
  } else {
    if (sites.size() != 1)
      throw UsageError(req.data_path + " holds " + std::to_string(sites.size()) +
                       " sites; pick one with --site-id");
    site = std::move(sites.front());
  }
  SiteOptions opt;
  opt.connect = parse_endpoint(req.endpoint);
  opt.idle_timeout = cfg.round_timeout();
  opt.mode = mode_options(cfg.convergence());
  opt.cancel = req.cancel;
  auto log = run_site(opt, std::move(site));
  if (log.aborted) throw FederationError("session aborted: " + log.abort_reason);
  if (!req.out_path.empty() && log.result) {
    ensure_parent(req.out_path);
    const auto& res = *log.result;
    KeyValues m = {{"command", "serve-site"},
                   {"site_id", std::to_string(log.site_id)},
                   {"rounds_served", std::to_string(log.rounds_served)},
                   {"converged", flag(res.converged)},
                   {"iterations", std::to_string(res.iterations)},
                   {"lambda_hat", fmt(res.lambda_hat)},
                   {"tau_hat", fmt(res.tau_hat)},
                   {"loglik", fmt(res.loglik)}};
    for (Eigen::Index j = 0; j < res.beta_hat.size(); ++j)
      m.emplace_back("beta.x" + std::to_string(j + 1), fmt(res.beta_hat[j]));
    for (std::size_t i = 0; i < res.site_ids.size(); ++i)
      if (res.site_ids[i] == log.site_id) m.emplace_back("mu_hat", fmt(res.mu_hats[i]));
    write_file(req.out_path, format_key_values(m));
  }
  return log;
}

std::vector<std::string> expand_patterns(const std::vector<std::string>& patterns) {
  std::set<std::string> out;
  for (const auto& p : patterns) {
    if (!has_glob_chars(p)) {
      if (!fs::exists(p)) throw UsageError("no such result file: " + p);
      out.insert(p);
      continue;
    }
    glob_t g{};
    const int rc = ::glob(p.c_str(), 0, nullptr, &g);
    if (rc == 0)
      for (std::size_t i = 0; i < g.gl_pathc; ++i) out.insert(g.gl_pathv[i]);
    globfree(&g);
    if (rc != 0 && rc != GLOB_NOMATCH) throw UsageError("cannot expand pattern " + p);
  }
  return {out.begin(), out.end()};
}

std::vector<std::string> run_evaluate(const RunConfig& cfg, const std::vector<std::string>& result_patterns,
                                      const std::string& truth_dir, const std::string& out_dir, bool force) {
  const auto files = expand_patterns(result_patterns);
  if (files.empty()) throw UsageError("no result files matched");
  const fs::path tdir(truth_dir);
  const std::string beta_path = (tdir / "truth_beta.csv").string();
  if (!fs::exists(beta_path)) throw UsageError("no truth_beta.csv in " + truth_dir);
  const Vector truth = read_truth_beta(beta_path);

  struct Entry {
    StoredFit fit;
    std::string data_path;
  };
  std::map<std::string, std::vector<Entry>> groups;
  for (const auto& f : files) {
    StoredFit s = read_fit_outputs(f);
    const std::string ds = s.value("dataset");
    if (ds.empty()) throw UsageError(f + ": result carries no dataset label to match against the truth");
    const std::string data = (tdir / (ds + ".csv")).string();
    if (!fs::exists(data)) throw UsageError(f + ": no truth data " + data);
    if (s.beta.size() != truth.size())
      throw UsageError(f + ": " + std::to_string(s.beta.size()) + " coefficients, truth has " +
                       std::to_string(truth.size()));
    if (!s.value("input_digest").empty() && s.value("input_digest") != file_digest(data))
      throw UsageError(f + ": fitted data differs from truth file " + data);
    std::string label = s.value("method");
    if (label.empty()) throw UsageError(f + ": result carries no method");
    if (s.value("config.centralized") == "true") label = "central-" + label;
    for (const auto& e : groups[label])
      if (e.fit.value("dataset") == ds) throw UsageError(f + ": dataset " + ds + " appears twice for " + label);
    groups[label].push_back({std::move(s), data});
  }

  std::vector<std::string> targets;
  for (const auto& [label, entries] : groups)
    for (const char* suffix : {".significance.csv", ".power.csv", ".coef_error.csv", ".roc.csv", ".roc_summary.csv"})
      targets.push_back((fs::path(out_dir) / (label + suffix)).string());
  targets.push_back((fs::path(out_dir) / "comparison.csv").string());
  targets.push_back((fs::path(out_dir) / "manifest.txt").string());
  refuse_existing(targets, force);
  fs::create_directories(out_dir);

  KeyValues manifest = {{"command", "evaluate"}, {"truth_dir", truth_dir}, {"config_hash", cfg.hash()}};
  for (const auto& k : RunConfig::known_keys()) manifest.emplace_back("config." + k, cfg.get(k));
  manifest.emplace_back("input.truth_beta", beta_path + " " + file_digest(beta_path));

  std::map<std::string, std::vector<SiteData>> data_cache;
  std::map<std::string, SignificanceReport> reports;
  std::vector<std::string> written;
  auto out = [&](const std::string& name, const std::string& content) {
    const std::string path = (fs::path(out_dir) / name).string();
    write_file(path, content);
    written.push_back(path);
    manifest.emplace_back("output." + name, file_digest(path));
  };

  for (const auto& [label, entries] : groups) {
    std::vector<Vector> p_sets, beta_hats;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& e : entries) {
      manifest.emplace_back("input." + label + "." + e.fit.value("dataset"), e.fit.path + " " + file_digest(e.fit.path));
      p_sets.push_back(e.fit.p_values);
      beta_hats.push_back(e.fit.beta);
      auto it = data_cache.find(e.data_path);
      if (it == data_cache.end()) it = data_cache.emplace(e.data_path, load_sites(e.data_path)).first;
      const bool pooled = e.fit.site_ids.size() == 1 && e.fit.site_ids.front() == 0;
      for (const auto& site : it->second) {
        double mu = 0;
        if (pooled) {
          mu = e.fit.mu_hats.front();
        } else {
          auto pos = std::find(e.fit.site_ids.begin(), e.fit.site_ids.end(), site.site_id);
          if (pos == e.fit.site_ids.end())
            throw UsageError(e.fit.path + ": no random effect for site " + std::to_string(site.site_id));
          mu = e.fit.mu_hats[static_cast<std::size_t>(pos - e.fit.site_ids.begin())];
        }
        const Vector eta = site.x * e.fit.beta;
        for (Eigen::Index r = 0; r < site.x.rows(); ++r) {
          scores.push_back(sigmoid(eta[r] + mu));
          labels.push_back(site.y[r] > 0.5 ? 1 : 0);
        }
      }
    }
    const auto sig = significance_confusion(p_sets, truth, cfg.alpha());
    reports.emplace(label, sig);
    out(label + ".significance.csv", significance_csv(sig));
    if (p_sets.size() >= 2) {
      out(label + ".power.csv", power_csv(empirical_power(p_sets, truth, cfg.alpha_grid())));
    } else {
      log_message(LogLevel::Warn, label + ": power curves need at least 2 datasets, writing an empty table");
      out(label + ".power.csv", "term,alpha,power\n");
    }
    out(label + ".coef_error.csv", coefficient_error_csv(coefficient_error(beta_hats, truth), label));
    try {
      const auto roc = roc_auc(scores, labels);
      out(label + ".roc.csv", roc_csv(roc));
      out(label + ".roc_summary.csv", roc_summary_csv(roc));
    } catch (const EvaluationError& e) {
      log_message(LogLevel::Warn, label + ": " + e.what());
      out(label + ".roc.csv", "threshold,tpr,fpr\n");
      out(label + ".roc_summary.csv", "metric,value,low,high\n");
    }
  }

  std::string cmp = "term";
  for (const auto& [label, r] : reports)
    for (const char* m : {"precision", "recall", "tnr", "accuracy"}) cmp += "," + label + "_" + m;
  cmp += "\n";
  auto cell = [](double v, bool d) { return d ? format_real(v) : std::string(); };
  const std::size_t rows = reports.begin()->second.per_coefficient.size() + 2;
  for (std::size_t i = 0; i < rows; ++i) {
    bool first = true;
    for (const auto& [label, r] : reports) {
      const ConfusionRow& row = i < r.per_coefficient.size() ? r.per_coefficient[i]
                                : i == r.per_coefficient.size() ? r.overall
                                                                : r.macro;
      if (first) cmp += row.term;
      first = false;
      cmp += "," + cell(row.precision, row.precision_defined) + "," + cell(row.recall, row.recall_defined) + "," +
             cell(row.tnr, row.tnr_defined) + "," + cell(row.accuracy, row.accuracy_defined);
    }
    cmp += "\n";
  }
  out("comparison.csv", cmp);
  const std::string mpath = (fs::path(out_dir) / "manifest.txt").string();
  write_file(mpath, format_key_values(manifest));
  written.push_back(mpath);
  return written;
}

}  // namespace fedglmm
