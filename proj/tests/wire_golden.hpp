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

#ifndef FEDGLMM_TESTS_WIRE_GOLDEN_HPP
#define FEDGLMM_TESTS_WIRE_GOLDEN_HPP

#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedglmm/wire.hpp"

namespace fedglmm::testing {

// Golden frames (hex, one "NAME hex" per line) and the messages they encode.
inline std::map<std::string, std::string> load_golden() {
  std::ifstream in(FEDGLMM_GOLDEN_DIR "/wire_frames.txt");
  if (!in) throw std::runtime_error("cannot open " FEDGLMM_GOLDEN_DIR "/wire_frames.txt");
  std::map<std::string, std::string> out;
  std::string name, hex;
  while (in >> name >> hex) {
    std::string bytes;
    for (std::size_t i = 0; i + 1 < hex.size(); i += 2)
      bytes += static_cast<char>(std::stoi(hex.substr(i, 2), nullptr, 16));
    out[name] = bytes;
  }
  return out;
}

inline std::vector<wire::Message> golden_messages() {
  Vector b(2);
  b << 0.1, -2.5;
  SiteSummary s;
  s.p = 2;
  s.score = b;
  s.hessian.resize(2, 2);
  s.hessian << -3, 0.5, 0.5, -1e-300;
  s.loglik = -123.456;
  s.mu_hat = 0.25;
  s.dtau = -1.0 / 3;
  s.n_i = 500;
  s.beta_echo = b;
  s.lambda_echo = 2;
  s.k_echo = 2;
  wire::Result r;
  r.beta_hat = b;
  r.tau_hat = 0.75;
  r.mu_hats = {0.1, -0.1};
  r.site_ids = {1, 2};
  r.lambda_hat = 0;
  r.loglik = -650.5;
  r.aic = 1307;
  r.bic = 1320.25;
  r.inference_available = true;
  r.std_err = Vector::Constant(2, 0.5);
  r.z = b * 2;
  r.p_values = Vector::Constant(2, 0.05);
  r.ci_low = b;
  r.ci_high = b * 3;
  r.iterations = 7;
  r.converged = true;
  r.final_delta = 1e-4;
  SessionConfig sc;
  sc.method = ApproximationMethod::gauss_hermite(4);
  sc.lambda = 1;
  sc.split_ratio = 0.7;
  sc.split_seed = 42;
  return {wire::Hello{3, 500, 10, 1}, wire::Config{sc}, wire::Compute{5, Partition::Train, b, 1.5},
          wire::Summary{5, s},        r,                 wire::Abort{"dup \"id\"\n"},
          wire::Bye{}};
}

}  // namespace fedglmm::testing

#endif  // FEDGLMM_TESTS_WIRE_GOLDEN_HPP
