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

#ifndef FEDGLMM_PIPELINE_HPP
#define FEDGLMM_PIPELINE_HPP

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedglmm/config.hpp"
#include "fedglmm/coordinator.hpp"
#include "fedglmm/io.hpp"
#include "fedglmm/network.hpp"

namespace fedglmm {

// Bad arguments or inputs that do not fit together.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An output would overwrite existing files and --force was not given.
class OutputCollision : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Files written for a fit with output prefix P:
//   P.result          manifest (key = value)
//   P.coef.csv        term,coef,std_err,z,p_value,ci_low,ci_high
//   P.sites.csv       site_id,mu_hat
//   P.trajectory.csv  one row per outer iteration
//   P.candidates.csv  one row per lambda candidate
std::vector<std::string> fit_output_paths(const std::string& prefix);

struct FitSource {
  std::string command;
  std::string input;          // data path, empty for federated runs
  std::string input_digest;
  std::string dataset;        // dataset stem used to find the truth files
  std::int64_t num_sites = 0;
};

void write_fit_outputs(const FitResult& r, const RunConfig& cfg, const FitSource& prov,
                       const std::string& prefix, bool force);

struct StoredFit {
  std::string path;
  KeyValues manifest;
  Vector beta;
  Vector std_err, z, p_values, ci_low, ci_high;
  std::vector<SiteId> site_ids;
  std::vector<double> mu_hats;
  std::string value(const std::string& key) const;  // empty when missing
};

StoredFit read_fit_outputs(const std::string& result_path);

// Merges every site into one (site id 0) for centralized fitting.
SiteData pool_sites(const std::vector<SiteData>& sites);

std::vector<std::string> run_generate(const RunConfig& cfg, int setting_id, const std::string& out_dir,
                                      bool force);

FitResult run_fit(const RunConfig& cfg, const std::string& data_path, const std::string& out_prefix, bool force);

struct CoordinateRequest {
  std::string endpoint;
  int expected_sites = 1;
  std::string out_prefix;
  bool force = false;
  std::string dataset;  // optional label used by evaluate
  const std::atomic<bool>* cancel = nullptr;
  std::function<void(std::uint16_t)> on_listening;
};

FitResult run_coordinate(const RunConfig& cfg, const CoordinateRequest& req);

struct ServeRequest {
  std::string data_path;
  std::string endpoint;
  std::optional<SiteId> site_id;  // pick one site from a pooled file
  std::string out_path;           // optional: where to write the received result
  bool force = false;
  const std::atomic<bool>* cancel = nullptr;
};

// Throws FederationError if the session is aborted.
SiteSessionLog run_serve_site(const RunConfig& cfg, const ServeRequest& req);

// `result_patterns` are .result paths or glob patterns.
std::vector<std::string> run_evaluate(const RunConfig& cfg, const std::vector<std::string>& result_patterns,
                                      const std::string& truth_dir, const std::string& out_dir, bool force);

std::vector<std::string> expand_patterns(const std::vector<std::string>& patterns);

}  // namespace fedglmm

#endif  // FEDGLMM_PIPELINE_HPP
