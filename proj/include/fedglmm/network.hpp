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

#ifndef FEDGLMM_NETWORK_HPP
#define FEDGLMM_NETWORK_HPP

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "fedglmm/coordinator.hpp"
#include "fedglmm/transport.hpp"
#include "fedglmm/wire.hpp"

namespace fedglmm {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }
};

// "host:port", "[v6]:port" or ":port".
Endpoint parse_endpoint(const std::string& text);

// FEDGLMM_ROUND_TIMEOUT in seconds if set, else 300 s.
std::chrono::milliseconds default_round_timeout();
// FEDGLMM_CAPTURE if set, else empty.
std::string default_capture_path();

struct CoordinatorOptions {
  Endpoint listen;
  int expected_sites = 1;
  ModelConfig model;
  ConvergenceConfig convergence;
  std::chrono::milliseconds round_timeout = default_round_timeout();
  std::string capture_path = default_capture_path();
  // Called once the socket is bound, with the actual port.
  std::function<void(std::uint16_t)> on_listening;
  const std::atomic<bool>* cancel = nullptr;
};

// Waits for exactly `expected_sites` HELLOs, runs the fit over the
// connections, then sends RESULT and BYE. On any failure every connected
// site receives ABORT and FederationError is thrown.
FitResult run_coordinator(const CoordinatorOptions& options);

struct SiteOptions {
  Endpoint connect;
  int connect_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::milliseconds idle_timeout = default_round_timeout();
  ModeOptions mode;
  std::string capture_path = default_capture_path();
  const std::atomic<bool>* cancel = nullptr;
};

struct SiteSessionLog {
  SiteId site_id = 0;
  std::int64_t rounds_served = 0;
  bool aborted = false;
  std::string abort_reason;
  std::optional<wire::Result> result;
};

// Serves one session for `data`. Returns normally after BYE or ABORT;
// throws FederationError if the coordinator cannot be reached or vanishes.
SiteSessionLog run_site(const SiteOptions& options, SiteData data);

}  // namespace fedglmm

#endif  // FEDGLMM_NETWORK_HPP
