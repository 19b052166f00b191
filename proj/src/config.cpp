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

#include "fedglmm/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>

#include "fedglmm/io.hpp"
#include "fedglmm/network.hpp"

namespace fedglmm {

namespace {

using Validator = std::function<void(const std::string&, const std::string&)>;

struct KeySpec {
  const char* key;
  const char* default_value;
  Validator check;
};

void positive(const std::string& v, const std::string& k) {
  if (!(parse_double(v, k) > 0)) throw ConfigError(k + " must be positive");
}

void positive_int(const std::string& v, const std::string& k) {
  if (parse_integer(v, k) < 1) throw ConfigError(k + " must be at least 1");
}

void nonneg(const std::string& v, const std::string& k) {
  if (!(parse_double(v, k) >= 0)) throw ConfigError(k + " must be non-negative");
}

void unsigned_int(const std::string& v, const std::string& k) {
  if (parse_integer(v, k) < 0) throw ConfigError(k + " must be non-negative");
}

void boolean(const std::string& v, const std::string& k) { parse_bool(v, k); }

void probability_open(const std::string& v, const std::string& k) {
  const double x = parse_double(v, k);
  if (!(x > 0 && x < 1)) throw ConfigError(k + " must lie in (0, 1)");
}

const std::vector<KeySpec>& specs() {
  static const std::vector<KeySpec> s = {
      {"alpha", "0.05", probability_open},
      {"alpha_grid", "0.001,0.005,0.01,0.025,0.05,0.1,0.2,0.3,0.5,1",
       [](const std::string& v, const std::string& k) {
         for (double a : parse_double_list(v, k))
           if (!(a >= 0 && a <= 1)) throw ConfigError(k + " values must lie in [0, 1]");
       }},
      {"centralized", "false", boolean},
      {"damping_cap", "1e8", positive},
      {"damping_growth", "10", [](const std::string& v, const std::string& k) {
         if (!(parse_double(v, k) > 1)) throw ConfigError(k + " must exceed 1");
       }},
      {"damping_init", "1e-8", positive},
      {"fixed_tau", "none", [](const std::string& v, const std::string& k) {
         if (v != "none") positive(v, k);
       }},
      {"gh_order", "2", [](const std::string& v, const std::string& k) {
         const auto n = parse_integer(v, k);
         if (n < 1 || n > 100) throw ConfigError(k + " must lie in 1..100");
       }},
      {"initial_tau", "1", positive},
      {"lambda", "auto", [](const std::string& v, const std::string& k) {
         if (v != "auto") nonneg(v, k);
       }},
      {"lambda_grid", "0,1,2,3,4,5,6,7,8,9,10", [](const std::string& v, const std::string& k) {
         const auto g = parse_double_list(v, k);
         if (g.empty()) throw ConfigError(k + " must not be empty");
         for (double x : g)
           if (!(x >= 0)) throw ConfigError(k + " values must be non-negative");
       }},
      {"large_sd", "2", positive},
      {"max_newton_iters", "100", positive_int},
      {"max_outer_iters", "200", positive_int},
      {"method", "gh", [](const std::string& v, const std::string& k) {
         if (v != "la" && v != "gh") throw ConfigError(k + " must be 'la' or 'gh'");
       }},
      {"mu_tol", "1e-6", positive},
      {"noise_sd", "0", nonneg},
      {"num_datasets", "20", positive_int},
      {"penalize_intercept", "false", boolean},
      {"round_timeout", "env", [](const std::string& v, const std::string& k) {
         if (v != "env") positive(v, k);
       }},
      {"seed", "20220713", unsigned_int},
      {"small_sd", "1", positive},
      {"split_ratio", "0.7", [](const std::string& v, const std::string& k) {
         const double x = parse_double(v, k);
         if (!(x > 0 && x <= 1)) throw ConfigError(k + " must lie in (0, 1]");
       }},
      {"split_seed", "20220713", unsigned_int},
      {"theta_tol", "1e-3", positive},
  };
  return s;
}

const KeySpec* find_spec(const std::string& key) {
  for (const auto& s : specs())
    if (key == s.key) return &s;
  return nullptr;
}

}  // namespace

double parse_double(const std::string& text, const std::string& what) {
  double v = 0;
  auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || r.ec != std::errc() || r.ptr != text.data() + text.size() || !std::isfinite(v))
    throw ConfigError(what + ": '" + text + "' is not a finite number");
  return v;
}

std::int64_t parse_integer(const std::string& text, const std::string& what) {
  std::int64_t v = 0;
  auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || r.ec != std::errc() || r.ptr != text.data() + text.size())
    throw ConfigError(what + ": '" + text + "' is not an integer");
  return v;
}

bool parse_bool(const std::string& text, const std::string& what) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(what + ": '" + text + "' is not a boolean");
}

std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  if (text.empty()) return out;
  for (const auto& part : split_csv_line(text)) {
    std::string t = part;
    t.erase(0, t.find_first_not_of(' '));
    t.erase(t.find_last_not_of(' ') + 1);
    out.push_back(parse_double(t, what));
  }
  return out;
}

RunConfig::RunConfig() {
  for (const auto& s : specs()) values_[s.key] = s.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec* s = find_spec(key);
  if (!s) throw ConfigError("unknown setting '" + key + "'");
  s->check(value, key);
  values_[key] = value;
}

void RunConfig::load_file(const std::string& path) {
  const std::string text = read_file(path);
  const auto kv = parse_key_values(text, path);
  // Re-scan for line numbers so value errors point at the right place.
  std::size_t line = 0, pos = 0;
  std::map<std::string, std::size_t> lines;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    ++line;
    const auto eq = text.find('=', pos);
    if (eq != std::string::npos && eq < end) {
      std::string k = text.substr(pos, eq - pos);
      k.erase(0, k.find_first_not_of(" \t"));
      k.erase(k.find_last_not_of(" \t") + 1);
      lines.emplace(k, line);
    }
    pos = end + 1;
  }
  for (const auto& [k, v] : kv) {
    try {
      set(k, v);
    } catch (const ConfigError& e) {
      throw DataError(path, lines[k], 1, e.what());
    }
  }
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown setting '" + key + "'");
  return it->second;
}

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& s : specs()) k.emplace_back(s.key);
    return k;
  }();
  return keys;
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  const int k = static_cast<int>(parse_integer(get("gh_order"), "gh_order"));
  m.method = get("method") == "la" ? ApproximationMethod::laplace() : ApproximationMethod::gauss_hermite(k);
  if (get("lambda") != "auto") m.lambda = parse_double(get("lambda"), "lambda");
  m.lambda_grid = parse_double_list(get("lambda_grid"), "lambda_grid");
  m.penalize_intercept = parse_bool(get("penalize_intercept"), "penalize_intercept");
  m.split_ratio = parse_double(get("split_ratio"), "split_ratio");
  m.split_seed = static_cast<std::uint64_t>(parse_integer(get("split_seed"), "split_seed"));
  if (get("fixed_tau") != "none") m.fixed_tau = parse_double(get("fixed_tau"), "fixed_tau");
  m.initial_tau = parse_double(get("initial_tau"), "initial_tau");
  return m;
}

ConvergenceConfig RunConfig::convergence() const {
  ConvergenceConfig c;
  c.theta_tol = parse_double(get("theta_tol"), "theta_tol");
  c.mu_tol = parse_double(get("mu_tol"), "mu_tol");
  c.max_outer_iters = static_cast<int>(parse_integer(get("max_outer_iters"), "max_outer_iters"));
  c.max_newton_iters = static_cast<int>(parse_integer(get("max_newton_iters"), "max_newton_iters"));
  c.damping_init = parse_double(get("damping_init"), "damping_init");
  c.damping_growth = parse_double(get("damping_growth"), "damping_growth");
  c.damping_cap = parse_double(get("damping_cap"), "damping_cap");
  c.validate();
  return c;
}

GenSetting RunConfig::gen_setting(int setting_id) const {
  auto s = table_setting(setting_id, static_cast<std::uint64_t>(parse_integer(get("seed"), "seed")),
                         parse_double(get("small_sd"), "small_sd"), parse_double(get("large_sd"), "large_sd"));
  s.num_datasets = static_cast<int>(parse_integer(get("num_datasets"), "num_datasets"));
  s.noise_sd = parse_double(get("noise_sd"), "noise_sd");
  s.validate();
  return s;
}

double RunConfig::alpha() const { return parse_double(get("alpha"), "alpha"); }

std::vector<double> RunConfig::alpha_grid() const { return parse_double_list(get("alpha_grid"), "alpha_grid"); }

bool RunConfig::centralized() const { return parse_bool(get("centralized"), "centralized"); }

std::chrono::milliseconds RunConfig::round_timeout() const {
  if (get("round_timeout") == "env") return default_round_timeout();
  return std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(parse_double(get("round_timeout"), "round_timeout") * 1000.0)));
}

std::string RunConfig::method_label() const {
  return get("method") == "la" ? "la" : "gh" + get("gh_order");
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::hash() const { return "fnv1a64:" + hex64(fnv1a64(canonical())); }

}  // namespace fedglmm
