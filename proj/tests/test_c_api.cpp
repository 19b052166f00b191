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

#define DOCTEST_CONFIG_IMPLEMENT
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "doctest.h"
#include "fedglmm/fedglmm.h"

namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name)
      : dir(fs::temp_directory_path() / ("fedglmm_capi_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fg_config* config(std::initializer_list<std::pair<const char*, const char*>> kv) {
  fg_config* c = fg_config_new();
  for (const auto& [k, v] : kv) REQUIRE(fg_config_set(c, k, v) == FG_OK);
  return c;
}

// Two sites, p = 3, logistic with a site shift.
fg_data* small_data(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u;
  const std::size_t n = 400, p = 3;
  std::vector<std::int64_t> ids(n);
  std::vector<double> x(n * p), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    ids[i] = i < n / 2 ? 1 : 2;
    x[i * p] = 1.0;
    x[i * p + 1] = z(rng);
    x[i * p + 2] = z(rng);
    const double eta = -0.5 + 0.8 * x[i * p + 1] - 0.4 * x[i * p + 2] + (ids[i] == 1 ? 0.3 : -0.3);
    y[i] = u(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
  }
  fg_data* d = nullptr;
  REQUIRE(fg_data_from_arrays(ids.data(), x.data(), y.data(), n, p, &d) == FG_OK);
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  if (!std::getenv("FEDGLMM_LOG")) setenv("FEDGLMM_LOG", "off", 1);
  doctest::Context ctx(argc, argv);
  return ctx.run();
}

TEST_CASE("config handles") {
  fg_config* c = fg_config_new();
  char buf[64];
  CHECK(fg_config_get(c, "method", buf, sizeof buf) == 2);
  CHECK(std::string(buf) == "gh");
  CHECK(fg_config_set(c, "gh_order", "5") == FG_OK);
  CHECK(fg_config_get(c, "gh_order", buf, sizeof buf) == 1);
  CHECK(std::string(buf) == "5");
  CHECK(fg_config_set(c, "no_such_key", "1") == FG_ERR_USAGE);
  CHECK(std::string(fg_last_error()).find("no_such_key") != std::string::npos);
  CHECK(fg_config_set(c, "method", "bogus") == FG_ERR_USAGE);
  CHECK(fg_config_set(c, "lambda", "-1") == FG_ERR_USAGE);
  CHECK(fg_config_get(c, "nope", buf, sizeof buf) == -1);
  const auto len = fg_config_dump(c, nullptr, 0);
  std::string dump(static_cast<std::size_t>(len) + 1, '\0');
  fg_config_dump(c, dump.data(), dump.size());
  CHECK(dump.find("gh_order = 5\n") != std::string::npos);

  Scratch s("cfg");
  std::ofstream(s / "bad.cfg") << "# comment\nmethod = la\ntheta_tol = zero\n";
  CHECK(fg_config_load_file(c, (s / "bad.cfg").c_str()) == FG_ERR_USAGE);
  CHECK(std::string(fg_last_error()).find(":3:") != std::string::npos);
  std::ofstream(s / "good.cfg") << "method = la\nlambda = 0.5\n";
  CHECK(fg_config_load_file(c, (s / "good.cfg").c_str()) == FG_OK);
  CHECK(fg_config_get(c, "lambda", buf, sizeof buf) == 3);
  fg_config_free(c);
}

TEST_CASE("in-memory fit through the C API") {
  fg_data* d = small_data(3);
  CHECK(fg_data_num_sites(d) == 2);
  CHECK(fg_data_num_rows(d) == 400);
  CHECK(fg_data_num_params(d) == 3);

  fg_config* la = config({{"method", "la"}, {"lambda", "0"}});
  fg_config* gh1 = config({{"method", "gh"}, {"gh_order", "1"}, {"lambda", "0"}});
  fg_result *a = nullptr, *b = nullptr;
  REQUIRE(fg_fit(la, d, &a) == FG_OK);
  REQUIRE(fg_fit(gh1, d, &b) == FG_OK);
  double ba[3], bb[3], p[3];
  fg_result_copy(a, FG_BETA, ba, 3);
  fg_result_copy(b, FG_BETA, bb, 3);
  for (int j = 0; j < 3; ++j) CHECK(std::abs(ba[j] - bb[j]) < 1e-10);
  CHECK(std::abs(fg_result_tau(a) - fg_result_tau(b)) < 1e-10);
  CHECK(fg_result_converged(a));
  CHECK(fg_result_inference_available(a));
  CHECK(fg_result_num_sites(a) == 2);
  fg_result_copy(a, FG_P_VALUE, p, 3);
  CHECK(p[1] < 0.05);
  std::int64_t id = 0;
  double mu = 0;
  CHECK(fg_result_site(a, 1, &id, &mu) == FG_OK);
  CHECK(id == 2);
  CHECK(fg_result_site(a, 2, &id, &mu) == FG_ERR_USAGE);

  fg_config* capped = config({{"lambda", "0"}, {"max_outer_iters", "1"}});
  fg_result* c = nullptr;
  CHECK(fg_fit(capped, d, &c) == FG_ERR_NOT_CONVERGED);
  REQUIRE(c != nullptr);
  CHECK_FALSE(fg_result_converged(c));

  fg_result_free(a);
  fg_result_free(b);
  fg_result_free(c);
  fg_config_free(la);
  fg_config_free(gh1);
  fg_config_free(capped);
  fg_data_free(d);

  const std::int64_t ids[2] = {1, 1};
  const double x[2] = {1.0, 2.0}, y[2] = {0.0, 1.0};
  fg_data* bad = nullptr;
  CHECK(fg_data_from_arrays(ids, x, y, 2, 1, &bad) == FG_ERR_USAGE);
  CHECK(bad == nullptr);
}

TEST_CASE("file commands, collisions and reproducibility") {
  Scratch s("files");
  fg_config* c = config({{"lambda", "0"}, {"num_datasets", "3"}});
  CHECK(fg_generate(c, 9, (s / "d").c_str(), 0) == FG_ERR_USAGE);
  REQUIRE(fg_generate(c, 5, (s / "d").c_str(), 0) == FG_OK);
  const std::string first = slurp(s / "d/setting5_dataset01.csv");
  CHECK(fg_generate(c, 5, (s / "d").c_str(), 0) == FG_ERR_COLLISION);
  REQUIRE(fg_generate(c, 5, (s / "d").c_str(), 1) == FG_OK);
  CHECK(slurp(s / "d/setting5_dataset01.csv") == first);
  CHECK(slurp(s / "d/setting5_dataset01.csv").rfind("site_id,y,x1,x2,x3,x4,x5,x6,x7,x8,x9,x10\n", 0) == 0);

  const std::string data = s / "d/setting5_dataset01.csv";
  REQUIRE(fg_fit_file(c, data.c_str(), (s / "r/a").c_str(), 0, nullptr) == FG_OK);
  const std::string manifest = slurp(s / "r/a.result");
  CHECK(manifest.find("config_hash = fnv1a64:") != std::string::npos);
  CHECK(manifest.find("input_digest = fnv1a64:") != std::string::npos);
  CHECK(fg_fit_file(c, data.c_str(), (s / "r/a").c_str(), 0, nullptr) == FG_ERR_COLLISION);
  REQUIRE(fg_fit_file(c, data.c_str(), (s / "r/a").c_str(), 1, nullptr) == FG_OK);
  CHECK(slurp(s / "r/a.result") == manifest);

  std::ofstream(s / "broken.csv") << "site_id,y,x1\n1,0,1\n1,x,1\n";
  CHECK(fg_fit_file(c, (s / "broken.csv").c_str(), (s / "r/b").c_str(), 0, nullptr) == FG_ERR_USAGE);
  CHECK(std::string(fg_last_error()).find(":3:3") != std::string::npos);

  const char* none[] = {"/nonexistent/*.result"};
  CHECK(fg_evaluate(c, none, 1, (s / "d").c_str(), (s / "ev").c_str(), 0) == FG_ERR_USAGE);
  const std::string pattern = s / "r/*.result";
  const char* one[] = {pattern.c_str()};
  CHECK(fg_evaluate(c, one, 1, (s / "d").c_str(), (s / "ev").c_str(), 0) == FG_OK);
  CHECK(fs::exists(s / "ev/gh2.significance.csv"));
  CHECK(fs::exists(s / "ev/comparison.csv"));
  CHECK(fg_evaluate(c, one, 1, (s / "d").c_str(), (s / "ev").c_str(), 0) == FG_ERR_COLLISION);
  fs::remove(s / "d/setting5_dataset01.csv");
  std::ofstream(s / "d/setting5_dataset01.csv") << "site_id,y,x1\n1,0,1\n";
  CHECK(fg_evaluate(c, one, 1, (s / "d").c_str(), (s / "ev2").c_str(), 0) == FG_ERR_USAGE);
  CHECK(std::string(fg_last_error()).find("a.result") != std::string::npos);
  fg_config_free(c);
}

TEST_CASE("cancel stops a waiting coordinator") {
  Scratch s("cancel");
  fg_config* c = config({{"lambda", "0"}});
  fg_cancel();
  CHECK(fg_coordinate(c, "127.0.0.1:0", 2, (s / "out").c_str(), 0, nullptr, nullptr, nullptr, nullptr) ==
        FG_ERR_FEDERATION);
  fg_reset_cancel();
  CHECK_FALSE(fs::exists(s / "out.result"));
  CHECK(fg_serve_site(c, "/nonexistent.csv", "127.0.0.1:1", -1, nullptr, 0) == FG_ERR_USAGE);
  fg_config_free(c);
}
