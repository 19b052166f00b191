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

#ifndef FEDGLMM_DATAGEN_HPP
#define FEDGLMM_DATAGEN_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fedglmm/model.hpp"

namespace fedglmm {

// Coefficients of the simulation study, intercept first.
Vector simulation_beta();

struct GenSetting {
  int setting_id = 1;
  int num_sites = 2;
  int site_size = 500;
  std::string variance_label = "small";
  int num_datasets = 20;
  std::uint64_t seed = 0;
  Vector true_beta = simulation_beta();
  double sen = 0.6;
  double sp = 0.9;
  double random_effect_sd = 1.0;
  double noise_sd = 0.0;  // sd of the per-row linear-predictor noise
  std::array<double, 3> normal_sds = {0.5, 1.0, 1.5};

  void validate() const;
};

// One of the eight settings: {2,10} sites x {500,30} rows x {small,large}.
GenSetting table_setting(int setting_id, std::uint64_t seed, double small_sd = 1.0,
                         double large_sd = 2.0);

struct SiteTruth {
  SiteId site_id = 0;
  std::array<double, 3> mu{};
  bool operator==(const SiteTruth&) const = default;
};

// Exactly one of tp/tn/fp/fn is 1: the row's simulated screening outcome.
struct RowTruth {
  SiteId site_id = 0;
  double log_odds = 0.0;
  int tp = 0, tn = 0, fp = 0, fn = 0;
  bool operator==(const RowTruth&) const = default;
};

struct GeneratedDataset {
  int setting_id = 0;
  int dataset_index = 0;
  std::vector<SiteData> sites;
  Vector true_beta;
  std::vector<SiteTruth> site_truth;
  std::vector<RowTruth> rows;  // in file order: by site, then row
};

bool same_dataset(const GeneratedDataset& a, const GeneratedDataset& b);

GeneratedDataset generate(const GenSetting& setting, int dataset_index);

}  // namespace fedglmm

#endif  // FEDGLMM_DATAGEN_HPP
