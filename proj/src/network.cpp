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

#include "fedglmm/network.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <thread>

#include "fedglmm/log.hpp"

namespace fedglmm {

namespace {

using Clock = std::chrono::steady_clock;
constexpr auto kPollSlice = std::chrono::milliseconds(100);

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Fd() { reset(); }
  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

std::string errno_text() { return std::strerror(errno); }

class Capture {
 public:
  explicit Capture(const std::string& path) {
    if (!path.empty()) {
      out_ = std::make_unique<std::ofstream>(path, std::ios::app);
      if (!*out_) throw FederationError("cannot open capture file " + path);
    }
  }
  void record(const char* direction, const std::string& peer, std::string_view body) {
    if (!out_) return;
    *out_ << direction << ' ' << peer << ' ' << body << '\n';
    out_->flush();
  }

 private:
  std::unique_ptr<std::ofstream> out_;
};

class Connection {
 public:
  Connection(Fd fd, std::string label, Capture* capture)
      : fd_(std::move(fd)), label_(std::move(label)), capture_(capture) {}

  int fd() const { return fd_.get(); }
  bool open() const { return fd_.valid(); }
  const std::string& label() const { return label_; }
  void set_label(std::string l) { label_ = std::move(l); }
  void close() { fd_.reset(); }

  void send(const wire::Message& m) {
    if (!open()) throw FederationError(label_ + ": connection closed");
    const std::string bytes = wire::encode_message(m);
    std::size_t off = 0;
    while (off < bytes.size()) {
      const ssize_t n = ::send(fd(), bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw FederationError(label_ + ": send failed: " + errno_text());
      }
      off += static_cast<std::size_t>(n);
    }
    capture_->record("send", label_, std::string_view(bytes).substr(4));
  }

  // Best effort; used on the failure path.
  void try_send(const wire::Message& m) {
    try {
      if (open()) send(m);
    } catch (const std::exception&) {
    }
  }

  // Reads what is available. Returns false once the peer has closed.
  bool pump() {
    char buf[65536];
    for (;;) {
      const ssize_t n = ::recv(fd(), buf, sizeof buf, 0);
      if (n > 0) {
        reader_.feed(buf, static_cast<std::size_t>(n));
        return true;
      }
      if (n == 0) return false;
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) return true;
      return false;
    }
  }

  std::optional<wire::Message> pop() {
    auto body = reader_.next();
    if (!body) return std::nullopt;
    capture_->record("recv", label_, *body);
    return wire::decode_body(*body);
  }

  void finish_reading() const { reader_.finish(); }

 private:
  Fd fd_;
  std::string label_;
  Capture* capture_;
  wire::FrameReader reader_;
};

void set_nonblocking(int fd) {
  const int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

struct AddrInfo {
  addrinfo* head = nullptr;
  ~AddrInfo() {
    if (head) ::freeaddrinfo(head);
  }
};

void resolve(const Endpoint& ep, bool passive, AddrInfo& out) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  const std::string port = std::to_string(ep.port);
  const char* host = ep.host.empty() ? nullptr : ep.host.c_str();
  const int rc = ::getaddrinfo(host, port.c_str(), &hints, &out.head);
  if (rc != 0) throw FederationError("cannot resolve " + ep.str() + ": " + ::gai_strerror(rc));
}

Fd listen_on(const Endpoint& ep, std::uint16_t& bound_port) {
  AddrInfo ai;
  resolve(ep, true, ai);
  std::string last = "no addresses";
  for (auto* a = ai.head; a; a = a->ai_next) {
    Fd fd(::socket(a->ai_family, a->ai_socktype, a->ai_protocol));
    if (!fd.valid()) continue;
    int one = 1;
    ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd.get(), a->ai_addr, a->ai_addrlen) != 0 || ::listen(fd.get(), 64) != 0) {
      last = errno_text();
      continue;
    }
    sockaddr_storage ss{};
    socklen_t len = sizeof ss;
    ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&ss), &len);
    bound_port = ntohs(ss.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port
                                                : reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
    set_nonblocking(fd.get());
    return fd;
  }
  throw FederationError("cannot listen on " + ep.str() + ": " + last);
}

Fd connect_once(const Endpoint& ep) {
  AddrInfo ai;
  resolve(ep, false, ai);
  std::string last = "no addresses";
  for (auto* a = ai.head; a; a = a->ai_next) {
    Fd fd(::socket(a->ai_family, a->ai_socktype, a->ai_protocol));
    if (!fd.valid()) continue;
    if (::connect(fd.get(), a->ai_addr, a->ai_addrlen) == 0) {
      set_nodelay(fd.get());
      return fd;
    }
    last = errno_text();
  }
  throw FederationError("cannot connect to " + ep.str() + ": " + last);
}

bool cancelled(const std::atomic<bool>* flag) { return flag && flag->load(); }

// Polls `fds` for input until at least one is ready, the deadline passes
// (returns false) or the cancel flag is raised (throws).
bool wait_readable(std::vector<pollfd>& fds, Clock::time_point deadline,
                   const std::atomic<bool>* cancel, const char* what) {
  for (;;) {
    if (cancelled(cancel)) throw FederationError(std::string("interrupted while ") + what);
    const auto now = Clock::now();
    if (now >= deadline) return false;
    const auto slice = std::min<Clock::duration>(deadline - now, kPollSlice);
    const int ms = static_cast<int>(std::chrono::ceil<std::chrono::milliseconds>(slice).count());
    for (auto& p : fds) p.revents = 0;
    const int rc = ::poll(fds.data(), fds.size(), std::max(ms, 1));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw FederationError(std::string("poll failed: ") + errno_text());
    }
    if (rc > 0) return true;
  }
}

std::string seconds_text(std::chrono::milliseconds d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g s", static_cast<double>(d.count()) / 1000.0);
  return buf;
}

class NetworkProvider : public SummaryProvider {
 public:
  NetworkProvider(std::vector<Connection>& conns, std::int64_t p, const CoordinatorOptions& opts)
      : conns_(conns), p_(p), opts_(opts) {}

  std::int64_t num_params() const override { return p_; }

  std::vector<SiteId> site_ids() const override { return ids_; }
  void set_site_ids(std::vector<SiteId> ids) { ids_ = std::move(ids); }

  void configure(const SessionConfig& session) override {
    send_all(wire::Config{session});
  }

  std::vector<SiteSummary> collect(Partition partition, const Theta& theta) override {
    ++round_;
    send_all(wire::Compute{round_, partition, theta.beta, theta.tau});
    std::vector<std::optional<SiteSummary>> got(conns_.size());
    std::size_t remaining = conns_.size();
    const auto deadline = Clock::now() + opts_.round_timeout;
    while (remaining > 0) {
      std::vector<pollfd> fds;
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < conns_.size(); ++i)
        if (!got[i]) {
          fds.push_back(pollfd{conns_[i].fd(), POLLIN, 0});
          idx.push_back(i);
        }
      bool ready;
      try {
        ready = wait_readable(fds, deadline, opts_.cancel, "waiting for summaries");
      } catch (const FederationError& e) {
        fail(e.what());
      }
      if (!ready)
        fail("round " + std::to_string(round_) + " timed out after " +
             seconds_text(opts_.round_timeout));
      for (std::size_t k = 0; k < fds.size(); ++k) {
        if (!fds[k].revents) continue;
        auto& c = conns_[idx[k]];
        const bool alive = c.pump();
        try {
          while (auto m = c.pop()) {
            if (auto* s = std::get_if<wire::Summary>(&*m)) {
              if (s->round != round_ || got[idx[k]])
                fail(c.label() + " answered round " + std::to_string(s->round) + " during round " +
                     std::to_string(round_));
              if (s->payload.p != p_) fail(c.label() + " sent a summary of the wrong dimension");
              got[idx[k]] = std::move(s->payload);
              --remaining;
            } else if (auto* a = std::get_if<wire::Abort>(&*m)) {
              c.close();
              fail(c.label() + " aborted: " + a->reason);
            } else {
              fail(c.label() + " sent unexpected " + wire::message_name(*m));
            }
          }
        } catch (const wire::WireError& e) {
          fail(c.label() + ": " + wire::error_kind_name(e.kind()) + ": " + e.what());
        }
        if (!alive && !got[idx[k]]) {
          c.close();
          fail(c.label() + " disconnected during round " + std::to_string(round_));
        }
      }
    }
    std::vector<SiteSummary> out;
    out.reserve(got.size());
    for (auto& g : got) out.push_back(std::move(*g));
    return out;
  }

  void publish(const FitResult& result) override {
    send_all(wire::make_result(result));
    send_all(wire::Bye{});
  }

  [[noreturn]] void fail(const std::string& reason) {
    abort_all(reason);
    throw FederationError(reason);
  }

  void abort_all(const std::string& reason) {
    if (aborted_) return;
    aborted_ = true;
    log_message(LogLevel::Error, "aborting session: " + reason);
    for (auto& c : conns_) c.try_send(wire::Abort{reason});
  }

  bool aborted() const { return aborted_; }

 private:
  void send_all(const wire::Message& m) {
    for (auto& c : conns_) {
      try {
        c.send(m);
      } catch (const FederationError& e) {
        c.close();
        fail(e.what());
      }
    }
  }

  std::vector<Connection>& conns_;
  std::int64_t p_;
  const CoordinatorOptions& opts_;
  std::vector<SiteId> ids_;
  std::int64_t round_ = 0;
  bool aborted_ = false;
};

std::chrono::milliseconds env_seconds(const char* name, std::chrono::milliseconds fallback) {
  if (const char* env = std::getenv(name)) {
    char* end = nullptr;
    const double s = std::strtod(env, &end);
    if (end && *end == '\0' && std::isfinite(s) && s > 0.0)
      return std::chrono::milliseconds(static_cast<std::int64_t>(std::ceil(s * 1000.0)));
  }
  return fallback;
}

}  // namespace

Endpoint parse_endpoint(const std::string& text) {
  Endpoint ep;
  std::string host, port;
  if (!text.empty() && text.front() == '[') {
    const auto close = text.find(']');
    if (close == std::string::npos || close + 1 >= text.size() || text[close + 1] != ':')
      throw std::invalid_argument("bad endpoint '" + text + "'");
    host = text.substr(1, close - 1);
    port = text.substr(close + 2);
  } else {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("endpoint needs host:port, got '" + text + "'");
    host = text.substr(0, colon);
    port = text.substr(colon + 1);
  }
  unsigned v = 0;
  auto r = std::from_chars(port.data(), port.data() + port.size(), v);
  if (port.empty() || r.ec != std::errc() || r.ptr != port.data() + port.size() || v > 65535)
    throw std::invalid_argument("bad port in endpoint '" + text + "'");
  ep.host = host.empty() ? "0.0.0.0" : host;
  ep.port = static_cast<std::uint16_t>(v);
  return ep;
}

std::chrono::milliseconds default_round_timeout() {
  return env_seconds("FEDGLMM_ROUND_TIMEOUT", std::chrono::seconds(300));
}

std::string default_capture_path() {
  const char* env = std::getenv("FEDGLMM_CAPTURE");
  return env ? env : "";
}

FitResult run_coordinator(const CoordinatorOptions& options) {
  if (options.expected_sites < 1) throw std::invalid_argument("expected_sites must be at least 1");
  options.convergence.validate();
  Capture capture(options.capture_path);
  std::uint16_t port = 0;
  Fd listener = listen_on(options.listen, port);
  log_message(LogLevel::Info, "coordinator listening on " + options.listen.host + ":" +
                                  std::to_string(port) + ", waiting for " +
                                  std::to_string(options.expected_sites) + " sites");
  if (options.on_listening) options.on_listening(port);

  const auto m = static_cast<std::size_t>(options.expected_sites);
  std::vector<Connection> registered;
  std::vector<Connection> pending;
  std::vector<SiteId> ids;
  std::int64_t p = 0;

  auto abort_registered = [&](const std::string& reason) {
    log_message(LogLevel::Error, "aborting session: " + reason);
    for (auto& c : registered) c.try_send(wire::Abort{reason});
    for (auto& c : pending) c.try_send(wire::Abort{reason});
    throw FederationError(reason);
  };

  const auto deadline = Clock::now() + options.round_timeout;
  while (registered.size() < m) {
    std::vector<pollfd> fds{pollfd{listener.get(), POLLIN, 0}};
    for (auto& c : pending) fds.push_back(pollfd{c.fd(), POLLIN, 0});
    // Registered sites are watched for disconnects.
    for (auto& c : registered) fds.push_back(pollfd{c.fd(), POLLIN, 0});
    bool ready;
    try {
      ready = wait_readable(fds, deadline, options.cancel, "waiting for sites");
    } catch (const FederationError& e) {
      abort_registered(e.what());
    }
    if (!ready)
      abort_registered("registration timed out after " + seconds_text(options.round_timeout) +
                       " with " + std::to_string(registered.size()) + " of " + std::to_string(m) +
                       " sites");
    const std::size_t old_pending = pending.size();
    for (std::size_t k = 0; k < registered.size(); ++k) {
      if (!fds[1 + old_pending + k].revents) continue;
      if (!registered[k].pump()) abort_registered(registered[k].label() + " disconnected before the fit");
    }
    std::vector<Connection> still;
    for (std::size_t k = 0; k < old_pending; ++k) {
      auto& c = pending[k];
      if (!fds[k + 1].revents) {
        still.push_back(std::move(c));
        continue;
      }
      if (!c.pump()) continue;
      std::optional<wire::Message> msg;
      try {
        msg = c.pop();
      } catch (const wire::WireError& e) {
        c.try_send(wire::Abort{std::string(wire::error_kind_name(e.kind())) + ": " + e.what()});
        continue;
      }
      if (!msg) {
        still.push_back(std::move(c));
        continue;
      }
      const auto* h = std::get_if<wire::Hello>(&*msg);
      if (!h) {
        c.try_send(wire::Abort{"expected HELLO"});
        continue;
      }
      if (std::find(ids.begin(), ids.end(), h->site_id) != ids.end()) {
        c.try_send(wire::Abort{"duplicate"});
        log_message(LogLevel::Warn, "rejected duplicate site id " + std::to_string(h->site_id));
        continue;
      }
      if (registered.size() >= m) {
        c.try_send(wire::Abort{"session full"});
        continue;
      }
      if (!registered.empty() && h->p != p) {
        c.try_send(wire::Abort{"site p=" + std::to_string(h->p) + " does not match p=" + std::to_string(p)});
        continue;
      }
      p = h->p;
      c.set_label("site:" + std::to_string(h->site_id));
      ids.push_back(h->site_id);
      log_message(LogLevel::Info, "registered site " + std::to_string(h->site_id) + " (n=" +
                                      std::to_string(h->n_i) + ", p=" + std::to_string(h->p) + ")");
      registered.push_back(std::move(c));
    }
    pending = std::move(still);
    if (fds[0].revents) {
      for (;;) {
        Fd fd(::accept(listener.get(), nullptr, nullptr));
        if (!fd.valid()) break;
        set_nodelay(fd.get());
        pending.emplace_back(std::move(fd), "peer", &capture);
      }
    }
  }
  // Later connections are refused.
  listener.reset();
  for (auto& c : pending) c.try_send(wire::Abort{"session full"});
  pending.clear();

  std::vector<std::size_t> order(registered.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  std::vector<Connection> sorted;
  for (auto i : order) sorted.push_back(std::move(registered[i]));
  std::sort(ids.begin(), ids.end());

  NetworkProvider provider(sorted, p, options);
  provider.set_site_ids(ids);
  try {
    return fit(provider, options.model, options.convergence);
  } catch (const FederationError&) {
    throw;
  } catch (const std::exception& e) {
    provider.abort_all(e.what());
    throw;
  }
}

SiteSessionLog run_site(const SiteOptions& options, SiteData data) {
  Capture capture(options.capture_path);
  SiteAgent agent(std::move(data), options.mode);
  const std::string label = "coordinator";

  Fd fd;
  auto backoff = options.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    if (cancelled(options.cancel)) throw FederationError("interrupted before connecting");
    try {
      fd = connect_once(options.connect);
      break;
    } catch (const FederationError& e) {
      if (attempt >= options.connect_attempts)
        throw FederationError(std::string(e.what()) + " (after " + std::to_string(attempt) + " attempts)");
      log_message(LogLevel::Warn, std::string(e.what()) + "; retrying");
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  Connection conn(std::move(fd), label, &capture);
  conn.send(agent.hello());

  SiteSessionLog log;
  log.site_id = agent.site_id();
  auto finish = [&]() {
    log.rounds_served = agent.rounds_served();
    log.aborted = agent.aborted();
    log.abort_reason = agent.abort_reason();
    log.result = agent.result();
    return log;
  };

  while (!agent.finished()) {
    std::vector<pollfd> fds{pollfd{conn.fd(), POLLIN, 0}};
    bool ready;
    try {
      ready = wait_readable(fds, Clock::now() + options.idle_timeout, options.cancel, "serving");
    } catch (const FederationError& e) {
      conn.try_send(wire::Abort{"site " + std::to_string(agent.site_id()) + " interrupted"});
      throw;
    }
    if (!ready) throw FederationError("no message from the coordinator within " + seconds_text(options.idle_timeout));
    const bool alive = conn.pump();
    try {
      while (!agent.finished()) {
        auto msg = conn.pop();
        if (!msg) break;
        if (auto reply = agent.handle(*msg)) conn.send(*reply);
      }
    } catch (const wire::WireError& e) {
      const std::string why = std::string(wire::error_kind_name(e.kind())) + ": " + e.what();
      conn.try_send(wire::Abort{why});
      throw FederationError(why);
    }
    if (!alive && !agent.finished()) {
      try {
        conn.finish_reading();
      } catch (const wire::WireError& e) {
        throw FederationError(std::string("coordinator connection lost: ") + e.what());
      }
      throw FederationError("coordinator closed the connection");
    }
  }
  return finish();
}

}  // namespace fedglmm
