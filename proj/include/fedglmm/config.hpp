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

#ifndef FEDGLMM_CONFIG_HPP
#define FEDGLMM_CONFIG_HPP

#include <chrono>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedglmm/coordinator.hpp"
#include "fedglmm/datagen.hpp"

namespace fedglmm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Settings shared by every command. Every known key always has a value, so
// the canonical text (and its hash) describes the whole run.
class RunConfig {
 public:
  RunConfig();

  // Throws ConfigError for unknown keys or values that do not parse.
  void set(const std::string& key, const std::string& value);
  void load_file(const std::string& path);
  const std::string& get(const std::string& key) const;
  static const std::vector<std::string>& known_keys();

  ModelConfig model() const;
  ConvergenceConfig convergence() const;
  GenSetting gen_setting(int setting_id) const;
  double alpha() const;
  std::vector<double> alpha_grid() const;
  bool centralized() const;
  std::chrono::milliseconds round_timeout() const;  // "env" defers to FEDGLMM_ROUND_TIMEOUT
  std::string method_label() const;  // "la" or "gh<K>"

  // Sorted "key = value" lines.
  std::string canonical() const;
  std::string hash() const;

 private:
  std::map<std::string, std::string> values_;
};

double parse_double(const std::string& text, const std::string& what);
std::int64_t parse_integer(const std::string& text, const std::string& what);
bool parse_bool(const std::string& text, const std::string& what);
std::vector<double> parse_double_list(const std::string& text, const std::string& what);

}  // namespace fedglmm

#endif  // FEDGLMM_CONFIG_HPP
