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

#include "fedglmm/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fedglmm/random.hpp"

namespace fedglmm {

Vector simulation_beta() {
  Vector b(10);
  b << -1.5, 0.1, -0.5, -0.3, 0.4, -0.2, -0.25, 0.35, -0.1, 0.5;
  return b;
}

void GenSetting::validate() const {
  if (num_sites < 1 || site_size < 1 || num_datasets < 1)
    throw std::invalid_argument("sites, rows and datasets must be positive");
  if (true_beta.size() != 10) throw std::invalid_argument("the generator needs 10 coefficients");
  if (!(random_effect_sd >= 0.0) || !(noise_sd >= 0.0))
    throw std::invalid_argument("standard deviations must be non-negative");
  for (double s : normal_sds)
    if (!(s > 0.0)) throw std::invalid_argument("covariate standard deviations must be positive");
}

GenSetting table_setting(int setting_id, std::uint64_t seed, double small_sd, double large_sd) {
  if (setting_id < 1 || setting_id > 8)
    throw std::invalid_argument("setting must be 1..8, got " + std::to_string(setting_id));
  const int k = setting_id - 1;
  GenSetting s;
  s.setting_id = setting_id;
  s.num_sites = (k / 2) % 2 == 0 ? 2 : 10;
  s.site_size = k < 4 ? 500 : 30;
  s.variance_label = k % 2 == 0 ? "small" : "large";
  s.random_effect_sd = k % 2 == 0 ? small_sd : large_sd;
  s.seed = seed;
  return s;
}

bool same_dataset(const GeneratedDataset& a, const GeneratedDataset& b) {
  if (a.setting_id != b.setting_id || a.dataset_index != b.dataset_index ||
      a.sites.size() != b.sites.size() || a.true_beta.size() != b.true_beta.size() ||
      a.true_beta != b.true_beta ||
      !(a.site_truth == b.site_truth) || !(a.rows == b.rows))
    return false;
  for (std::size_t i = 0; i < a.sites.size(); ++i)
    if (a.sites[i].site_id != b.sites[i].site_id || a.sites[i].x.rows() != b.sites[i].x.rows() ||
        a.sites[i].x.cols() != b.sites[i].x.cols() || a.sites[i].x != b.sites[i].x ||
        a.sites[i].y != b.sites[i].y)
      return false;
  return true;
}

GeneratedDataset generate(const GenSetting& setting, int dataset_index) {
  setting.validate();
  if (dataset_index < 0 || dataset_index >= setting.num_datasets)
    throw std::invalid_argument("dataset index out of range");
  CounterRng rng(derive_key({setting.seed, static_cast<std::uint64_t>(setting.setting_id),
                             static_cast<std::uint64_t>(dataset_index)}));
  GeneratedDataset ds;
  ds.setting_id = setting.setting_id;
  ds.dataset_index = dataset_index;
  ds.true_beta = setting.true_beta;
  const auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  static constexpr double kBernoulliP[3] = {0.1, 0.3, 0.5};
  static constexpr double kUniformHalfWidth[3] = {0.5, 0.7, 1.0};

  for (int i = 0; i < setting.num_sites; ++i) {
    SiteTruth st;
    st.site_id = i + 1;
    for (auto& m : st.mu) m = setting.random_effect_sd * rng.normal();
    SiteData site{st.site_id, Matrix(setting.site_size, 10), Vector(setting.site_size)};
    for (int r = 0; r < setting.site_size; ++r) {
      site.x(r, 0) = 1.0;
      for (int c = 0; c < 3; ++c) site.x(r, 1 + c) = rng.bernoulli(kBernoulliP[c]) ? 1.0 : 0.0;
      for (int c = 0; c < 3; ++c) site.x(r, 4 + c) = setting.normal_sds[c] * rng.normal();
      for (int c = 0; c < 3; ++c)
        site.x(r, 7 + c) = rng.uniform(-kUniformHalfWidth[c], kUniformHalfWidth[c]);
      double eta = site.x.row(r).dot(setting.true_beta) + st.mu[0];
      if (setting.noise_sd > 0.0) eta += setting.noise_sd * rng.normal();
      const bool y = rng.uniform() < sigmoid(eta);
      site.y[r] = y ? 1.0 : 0.0;

      RowTruth rt;
      rt.site_id = st.site_id;
      rt.log_odds = eta;
      if (y) {
        (rng.bernoulli(clamp01(setting.sen + st.mu[1])) ? rt.tp : rt.fn) = 1;
      } else {
        (rng.bernoulli(clamp01(setting.sp + st.mu[2])) ? rt.tn : rt.fp) = 1;
      }
      ds.rows.push_back(rt);
    }
    ds.site_truth.push_back(st);
    ds.sites.push_back(std::move(site));
  }
  return ds;
}

}  // namespace fedglmm
