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

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <future>
#include <random>
#include <thread>

#include "doctest.h"
#include "fedglmm/network.hpp"
#include "oracles.hpp"

using namespace fedglmm;
using namespace std::chrono_literals;

namespace {

std::vector<SiteData> sample_sites(int m, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Vector beta(3);
  beta << -0.4, 0.5, -0.2;
  return oracle::random_glmm_sites(rng, m, n, beta, 0.7);
}

ModelConfig gh2() {
  ModelConfig m;
  m.method = ApproximationMethod::gauss_hermite(2);
  m.lambda = 0.0;
  return m;
}

struct Harness {
  std::promise<std::uint16_t> port_promise;
  std::shared_future<std::uint16_t> port = port_promise.get_future().share();
  CoordinatorOptions opts;

  explicit Harness(int m, std::chrono::milliseconds timeout = 20s) {
    opts.listen = Endpoint{"127.0.0.1", 0};
    opts.expected_sites = m;
    opts.model = gh2();
    opts.round_timeout = timeout;
    opts.capture_path.clear();
    opts.on_listening = [this](std::uint16_t p) { port_promise.set_value(p); };
  }

  SiteOptions site_options() {
    SiteOptions s;
    s.connect = Endpoint{"127.0.0.1", port.get()};
    s.idle_timeout = 20s;
    s.capture_path.clear();
    return s;
  }
};

// A hand-driven peer for protocol edge cases.
class RawPeer {
 public:
  explicit RawPeer(std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in a{};
    a.sin_family = AF_INET;
    a.sin_port = htons(port);
    ::inet_pton(AF_INET, "127.0.0.1", &a.sin_addr);
    REQUIRE(::connect(fd_, reinterpret_cast<sockaddr*>(&a), sizeof a) == 0);
  }
  ~RawPeer() { close(); }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  void send_raw(const std::string& bytes) { ::send(fd_, bytes.data(), bytes.size(), MSG_NOSIGNAL); }
  void send(const wire::Message& m) { send_raw(wire::encode_message(m)); }
  // Next message, or nullopt on close/timeout.
  std::optional<wire::Message> receive(std::chrono::milliseconds timeout = 10s) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (auto b = reader_.next()) return wire::decode_body(*b);
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) return std::nullopt;
      pollfd p{fd_, POLLIN, 0};
      if (::poll(&p, 1, static_cast<int>(left.count())) <= 0) return std::nullopt;
      char buf[4096];
      const auto n = ::recv(fd_, buf, sizeof buf, 0);
      if (n <= 0) return std::nullopt;
      reader_.feed(buf, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_ = -1;
  wire::FrameReader reader_;
};

}  // namespace

TEST_CASE("fit over TCP equals the in-process fit") {
  auto sites = sample_sites(2, 200, 1);
  Harness h(2);
  const std::string cap = "network_capture_test.txt";
  std::remove(cap.c_str());
  h.opts.capture_path = cap;
  auto coord = std::async(std::launch::async, [&] { return run_coordinator(h.opts); });
  std::vector<std::future<SiteSessionLog>> agents;
  for (const auto& s : sites)
    agents.push_back(std::async(std::launch::async, [&h, s] { return run_site(h.site_options(), s); }));
  const FitResult net = coord.get();
  InProcessProvider direct(sites);
  const FitResult local = fit(direct, gh2(), ConvergenceConfig{});
  CHECK(net.beta_hat == local.beta_hat);
  CHECK(net.tau_hat == local.tau_hat);
  CHECK(net.std_err == local.std_err);
  CHECK(net.mu_hats == local.mu_hats);
  CHECK(net.site_ids == std::vector<SiteId>{1, 2});
  for (auto& a : agents) {
    const auto log = a.get();
    CHECK_FALSE(log.aborted);
    REQUIRE(log.result.has_value());
    CHECK(log.result->beta_hat == local.beta_hat);
    CHECK(log.rounds_served > 0);
  }
  std::ifstream in(cap);
  std::string line;
  int summaries = 0, lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    if (line.find(" SUMMARY{") != std::string::npos) ++summaries;
  }
  CHECK(summaries > 0);
  CHECK(lines > summaries);
  std::remove(cap.c_str());
}

TEST_CASE("missing site times out and aborts the others") {
  auto sites = sample_sites(2, 50, 2);
  Harness h(3, 1000ms);
  const auto start = std::chrono::steady_clock::now();
  auto coord = std::async(std::launch::async, [&] { return run_coordinator(h.opts); });
  std::vector<std::future<SiteSessionLog>> agents;
  for (const auto& s : sites)
    agents.push_back(std::async(std::launch::async, [&h, s] { return run_site(h.site_options(), s); }));
  CHECK_THROWS_AS(coord.get(), FederationError);
  CHECK(std::chrono::steady_clock::now() - start < 10s);
  for (auto& a : agents) {
    const auto log = a.get();
    CHECK(log.aborted);
    CHECK(log.abort_reason.find("timed out") != std::string::npos);
  }
}

TEST_CASE("a site that never answers COMPUTE triggers a round timeout") {
  auto sites = sample_sites(1, 50, 3);
  Harness h(2, 800ms);
  auto coord = std::async(std::launch::async, [&] { return run_coordinator(h.opts); });
  auto good = std::async(std::launch::async, [&h, s = sites[0]] { return run_site(h.site_options(), s); });
  RawPeer mute(h.port.get());
  mute.send(wire::Hello{77, 50, 3, 1});
  const auto start = std::chrono::steady_clock::now();
  CHECK_THROWS_AS(coord.get(), FederationError);
  CHECK(std::chrono::steady_clock::now() - start < 8s);
  bool saw_abort = false;
  while (auto m = mute.receive(2s)) saw_abort = saw_abort || std::holds_alternative<wire::Abort>(*m);
  CHECK(saw_abort);
  CHECK(good.get().aborted);
}

TEST_CASE("duplicate and incompatible registrations are rejected") {
  auto sites = sample_sites(2, 60, 4);
  Harness h(2);
  auto coord = std::async(std::launch::async, [&] { return run_coordinator(h.opts); });
  auto first = std::async(std::launch::async, [&h, s = sites[0]] { return run_site(h.site_options(), s); });
  std::this_thread::sleep_for(200ms);

  RawPeer dup(h.port.get());
  dup.send(wire::Hello{sites[0].site_id, 60, 3, 1});
  auto reply = dup.receive();
  REQUIRE(reply.has_value());
  REQUIRE(std::holds_alternative<wire::Abort>(*reply));
  CHECK(std::get<wire::Abort>(*reply).reason == "duplicate");

  RawPeer old(h.port.get());
  const std::string body = "HELLO{n_i=1;p=3;protocol_version=2;site_id=9}";
  std::string frame(4, '\0');
  frame[0] = static_cast<char>(body.size());
  old.send_raw(frame + body);
  auto v = old.receive();
  REQUIRE(v.has_value());
  REQUIRE(std::holds_alternative<wire::Abort>(*v));
  CHECK(std::get<wire::Abort>(*v).reason.find("version-mismatch") != std::string::npos);

  auto second = std::async(std::launch::async, [&h, s = sites[1]] { return run_site(h.site_options(), s); });
  const auto r = coord.get();
  CHECK(r.converged);
  CHECK_FALSE(first.get().aborted);
  CHECK_FALSE(second.get().aborted);
}

TEST_CASE("site disconnect mid-fit aborts the survivors") {
  auto sites = sample_sites(1, 50, 5);
  Harness h(2);
  auto coord = std::async(std::launch::async, [&] { return run_coordinator(h.opts); });
  auto good = std::async(std::launch::async, [&h, s = sites[0]] { return run_site(h.site_options(), s); });
  RawPeer flaky(h.port.get());
  flaky.send(wire::Hello{5, 50, 3, 1});
  for (;;) {
    auto m = flaky.receive();
    REQUIRE(m.has_value());
    if (std::holds_alternative<wire::Compute>(*m)) break;
  }
  flaky.close();
  try {
    coord.get();
    FAIL("expected FederationError");
  } catch (const FederationError& e) {
    CHECK(std::string(e.what()).find("disconnected") != std::string::npos);
  }
  const auto log = good.get();
  CHECK(log.aborted);
}

TEST_CASE("cancelling the coordinator broadcasts ABORT") {
  auto sites = sample_sites(1, 50, 6);
  Harness h(2);
  std::atomic<bool> cancel{false};
  h.opts.cancel = &cancel;
  auto coord = std::async(std::launch::async, [&] { return run_coordinator(h.opts); });
  auto good = std::async(std::launch::async, [&h, s = sites[0]] { return run_site(h.site_options(), s); });
  RawPeer peer(h.port.get());
  peer.send(wire::Hello{9, 50, 3, 1});
  for (;;) {
    auto m = peer.receive();
    REQUIRE(m.has_value());
    if (std::holds_alternative<wire::Compute>(*m)) break;
  }
  cancel = true;
  CHECK_THROWS_AS(coord.get(), FederationError);
  bool saw_abort = false;
  while (auto m = peer.receive(2s)) saw_abort = saw_abort || std::holds_alternative<wire::Abort>(*m);
  CHECK(saw_abort);
  CHECK(good.get().aborted);
}

TEST_CASE("site gives up after its connection attempts") {
  // Find a port with nothing listening.
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in a{};
  a.sin_family = AF_INET;
  ::inet_pton(AF_INET, "127.0.0.1", &a.sin_addr);
  ::bind(fd, reinterpret_cast<sockaddr*>(&a), sizeof a);
  socklen_t len = sizeof a;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&a), &len);
  const auto port = ntohs(a.sin_port);
  ::close(fd);
  SiteOptions s;
  s.connect = Endpoint{"127.0.0.1", port};
  s.initial_backoff = 10ms;
  s.capture_path.clear();
  try {
    run_site(s, sample_sites(1, 10, 7)[0]);
    FAIL("expected FederationError");
  } catch (const FederationError& e) {
    CHECK(std::string(e.what()).find("3 attempts") != std::string::npos);
  }
}

TEST_CASE("endpoint parsing") {
  auto e = parse_endpoint("localhost:8080");
  CHECK(e.host == "localhost");
  CHECK(e.port == 8080);
  CHECK(parse_endpoint(":9000").host == "0.0.0.0");
  CHECK(parse_endpoint("[::1]:7").host == "::1");
  CHECK_THROWS(parse_endpoint("nohost"));
  CHECK_THROWS(parse_endpoint("h:99999"));
  CHECK_THROWS(parse_endpoint("h:x"));
}
