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

#include "fedglmm/fedglmm.h"

#include <algorithm>
#include <atomic>
#include <limits>
#include <cstring>
#include <new>
#include <string>

#include "fedglmm/config.hpp"
#include "fedglmm/coordinator.hpp"
#include "fedglmm/evaluation.hpp"
#include "fedglmm/io.hpp"
#include "fedglmm/pipeline.hpp"
#include "fedglmm/transport.hpp"

struct fg_config {
  fedglmm::RunConfig cfg;
};

struct fg_data {
  std::vector<fedglmm::SiteData> sites;
};

struct fg_result {
  fedglmm::FitResult r;
};

namespace {

thread_local std::string g_last_error;
std::atomic<bool> g_cancel{false};
static_assert(std::atomic<bool>::is_always_lock_free);

fg_status fail(fg_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Maps library exceptions onto status codes.
template <class F>
fg_status guarded(F&& f) {
  g_last_error.clear();
  try {
    return f();
  } catch (const fedglmm::OutputCollision& e) {
    return fail(FG_ERR_COLLISION, e.what());
  } catch (const fedglmm::FederationError& e) {
    return fail(FG_ERR_FEDERATION, e.what());
  } catch (const fedglmm::FitError& e) {
    return fail(FG_ERR_NOT_CONVERGED, e.what());
  } catch (const fedglmm::UsageError& e) {
    return fail(FG_ERR_USAGE, e.what());
  } catch (const fedglmm::ConfigError& e) {
    return fail(FG_ERR_USAGE, e.what());
  } catch (const fedglmm::DataError& e) {
    return fail(FG_ERR_USAGE, e.what());
  } catch (const fedglmm::ModelError& e) {
    return fail(FG_ERR_USAGE, e.what());
  } catch (const fedglmm::EvaluationError& e) {
    return fail(FG_ERR_USAGE, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(FG_ERR_USAGE, e.what());
  } catch (const std::bad_alloc&) {
    return fail(FG_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(FG_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(FG_ERR_INTERNAL, "unknown error");
  }
}

ptrdiff_t copy_out(const std::string& s, char* buf, size_t len) {
  if (buf && len > 0) {
    const size_t n = std::min(len - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
  return static_cast<ptrdiff_t>(s.size());
}

const char* str(const char* s) { return s ? s : ""; }

fg_status finish_fit(fedglmm::FitResult&& r, fg_result** out) {
  const bool converged = r.converged;
  if (out) *out = new fg_result{std::move(r)};
  return converged ? FG_OK : fail(FG_ERR_NOT_CONVERGED, "fit did not converge");
}

}  // namespace

extern "C" {

const char* fg_version(void) { return "0.1.0"; }

const char* fg_last_error(void) { return g_last_error.c_str(); }

const char* fg_status_name(fg_status status) {
  switch (status) {
    case FG_OK: return "ok";
    case FG_ERR_INTERNAL: return "internal error";
    case FG_ERR_USAGE: return "usage error";
    case FG_ERR_COLLISION: return "output collision";
    case FG_ERR_NOT_CONVERGED: return "not converged";
    case FG_ERR_FEDERATION: return "federation failure";
  }
  return "unknown status";
}

fg_config* fg_config_new(void) { return new (std::nothrow) fg_config{}; }

void fg_config_free(fg_config* cfg) { delete cfg; }

fg_status fg_config_load_file(fg_config* cfg, const char* path) {
  return guarded([&] {
    if (!cfg || !path) return fail(FG_ERR_USAGE, "null argument");
    cfg->cfg.load_file(path);
    return FG_OK;
  });
}

fg_status fg_config_set(fg_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    if (!cfg || !key || !value) return fail(FG_ERR_USAGE, "null argument");
    cfg->cfg.set(key, value);
    return FG_OK;
  });
}

ptrdiff_t fg_config_get(const fg_config* cfg, const char* key, char* buf, size_t len) {
  ptrdiff_t n = -1;
  guarded([&] {
    if (!cfg || !key) return fail(FG_ERR_USAGE, "null argument");
    n = copy_out(cfg->cfg.get(key), buf, len);
    return FG_OK;
  });
  return n;
}

ptrdiff_t fg_config_dump(const fg_config* cfg, char* buf, size_t len) {
  if (!cfg) return -1;
  return copy_out(cfg->cfg.canonical(), buf, len);
}

fg_status fg_data_load_csv(const char* path, fg_data** out) {
  return guarded([&] {
    if (!path || !out) return fail(FG_ERR_USAGE, "null argument");
    *out = new fg_data{fedglmm::load_sites(path)};
    return FG_OK;
  });
}

fg_status fg_data_from_arrays(const int64_t* site_ids, const double* x, const double* y, size_t n, size_t p,
                              fg_data** out) {
  return guarded([&] {
    if (!site_ids || !x || !y || !out) return fail(FG_ERR_USAGE, "null argument");
    if (n == 0 || p == 0) return fail(FG_ERR_USAGE, "need at least one row and one column");
    std::vector<fedglmm::SiteId> ids(site_ids, site_ids + n);
    fedglmm::Matrix xm = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        x, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    fedglmm::Vector yv = Eigen::Map<const fedglmm::Vector>(y, static_cast<Eigen::Index>(n));
    auto sites = fedglmm::partition_by_site(ids, xm, yv);
    for (const auto& s : sites) fedglmm::validate_site(s);
    *out = new fg_data{std::move(sites)};
    return FG_OK;
  });
}

void fg_data_free(fg_data* data) { delete data; }

size_t fg_data_num_sites(const fg_data* data) { return data ? data->sites.size() : 0; }

size_t fg_data_num_rows(const fg_data* data) {
  size_t n = 0;
  if (data)
    for (const auto& s : data->sites) n += s.n();
  return n;
}

size_t fg_data_num_params(const fg_data* data) {
  return data && !data->sites.empty() ? data->sites.front().p() : 0;
}

fg_status fg_fit(const fg_config* cfg, const fg_data* data, fg_result** out) {
  return guarded([&] {
    if (!cfg || !data || !out) return fail(FG_ERR_USAGE, "null argument");
    *out = nullptr;
    auto sites = data->sites;
    if (cfg->cfg.centralized()) sites = {fedglmm::pool_sites(sites)};
    const auto conv = cfg->cfg.convergence();
    fedglmm::InProcessProvider provider(std::move(sites), fedglmm::mode_options(conv));
    return finish_fit(fedglmm::fit(provider, cfg->cfg.model(), conv), out);
  });
}

void fg_result_free(fg_result* r) { delete r; }

size_t fg_result_num_params(const fg_result* r) { return r ? static_cast<size_t>(r->r.beta_hat.size()) : 0; }
size_t fg_result_num_sites(const fg_result* r) { return r ? r->r.site_ids.size() : 0; }
int fg_result_converged(const fg_result* r) { return r && r->r.converged; }
int fg_result_iterations(const fg_result* r) { return r ? r->r.iterations : 0; }
int fg_result_inference_available(const fg_result* r) { return r && r->r.inference_available; }
double fg_result_tau(const fg_result* r) { return r ? r->r.tau_hat : 0.0; }
double fg_result_lambda(const fg_result* r) { return r ? r->r.lambda_hat : 0.0; }
double fg_result_loglik(const fg_result* r) { return r ? r->r.loglik : 0.0; }
double fg_result_aic(const fg_result* r) { return r ? r->r.aic : 0.0; }
double fg_result_bic(const fg_result* r) { return r ? r->r.bic : 0.0; }
double fg_result_final_delta(const fg_result* r) { return r ? r->r.final_delta : 0.0; }

fg_status fg_result_copy(const fg_result* r, fg_vector which, double* out, size_t len) {
  if (!r || !out) return fail(FG_ERR_USAGE, "null argument");
  const fedglmm::Vector* v = nullptr;
  switch (which) {
    case FG_BETA: v = &r->r.beta_hat; break;
    case FG_STD_ERR: v = &r->r.std_err; break;
    case FG_Z: v = &r->r.z; break;
    case FG_P_VALUE: v = &r->r.p_values; break;
    case FG_CI_LOW: v = &r->r.ci_low; break;
    case FG_CI_HIGH: v = &r->r.ci_high; break;
    default: return fail(FG_ERR_USAGE, "unknown vector");
  }
  const size_t p = static_cast<size_t>(r->r.beta_hat.size());
  for (size_t i = 0; i < std::min(len, p); ++i)
    out[i] = static_cast<Eigen::Index>(i) < v->size() ? (*v)[static_cast<Eigen::Index>(i)]
                                                      : std::numeric_limits<double>::quiet_NaN();
  return FG_OK;
}

fg_status fg_result_site(const fg_result* r, size_t index, int64_t* site_id, double* mu_hat) {
  if (!r || index >= r->r.site_ids.size()) return fail(FG_ERR_USAGE, "site index out of range");
  if (site_id) *site_id = r->r.site_ids[index];
  if (mu_hat) *mu_hat = r->r.mu_hats[index];
  return FG_OK;
}

fg_status fg_generate(const fg_config* cfg, int setting_id, const char* out_dir, int force) {
  return guarded([&] {
    if (!cfg || !out_dir) return fail(FG_ERR_USAGE, "null argument");
    fedglmm::run_generate(cfg->cfg, setting_id, out_dir, force != 0);
    return FG_OK;
  });
}

fg_status fg_fit_file(const fg_config* cfg, const char* data_path, const char* out_prefix, int force,
                      fg_result** out) {
  return guarded([&] {
    if (!cfg || !data_path || !out_prefix) return fail(FG_ERR_USAGE, "null argument");
    if (out) *out = nullptr;
    return finish_fit(fedglmm::run_fit(cfg->cfg, data_path, out_prefix, force != 0), out);
  });
}

fg_status fg_coordinate(const fg_config* cfg, const char* endpoint, int expected_sites, const char* out_prefix,
                        int force, const char* dataset_label, fg_listening_fn on_listening, void* user,
                        fg_result** out) {
  return guarded([&] {
    if (!cfg || !endpoint || !out_prefix) return fail(FG_ERR_USAGE, "null argument");
    if (out) *out = nullptr;
    fedglmm::CoordinateRequest req;
    req.endpoint = endpoint;
    req.expected_sites = expected_sites;
    req.out_prefix = out_prefix;
    req.force = force != 0;
    req.dataset = str(dataset_label);
    req.cancel = &g_cancel;
    if (on_listening) req.on_listening = [=](std::uint16_t port) { on_listening(port, user); };
    return finish_fit(fedglmm::run_coordinate(cfg->cfg, req), out);
  });
}

fg_status fg_serve_site(const fg_config* cfg, const char* data_path, const char* endpoint, int64_t site_id,
                        const char* out_path, int force) {
  return guarded([&] {
    if (!cfg || !data_path || !endpoint) return fail(FG_ERR_USAGE, "null argument");
    fedglmm::ServeRequest req;
    req.data_path = data_path;
    req.endpoint = endpoint;
    if (site_id >= 0) req.site_id = site_id;
    req.out_path = str(out_path);
    req.force = force != 0;
    req.cancel = &g_cancel;
    fedglmm::run_serve_site(cfg->cfg, req);
    return FG_OK;
  });
}

fg_status fg_evaluate(const fg_config* cfg, const char* const* result_patterns, size_t count, const char* truth_dir,
                      const char* out_dir, int force) {
  return guarded([&] {
    if (!cfg || (!result_patterns && count) || !truth_dir || !out_dir) return fail(FG_ERR_USAGE, "null argument");
    std::vector<std::string> patterns;
    for (size_t i = 0; i < count; ++i) patterns.emplace_back(str(result_patterns[i]));
    fedglmm::run_evaluate(cfg->cfg, patterns, truth_dir, out_dir, force != 0);
    return FG_OK;
  });
}

void fg_cancel(void) { g_cancel.store(true, std::memory_order_relaxed); }

void fg_reset_cancel(void) { g_cancel.store(false, std::memory_order_relaxed); }

}  // extern "C"
