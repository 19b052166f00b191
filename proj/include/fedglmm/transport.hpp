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

#ifndef FEDGLMM_TRANSPORT_HPP
#define FEDGLMM_TRANSPORT_HPP

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedglmm/coordinator.hpp"
#include "fedglmm/quadrature.hpp"
#include "fedglmm/wire.hpp"

namespace fedglmm {

// Site-side state: the local data, its train/validation split for the
// current session, and the last mode per partition used as a warm start.
class SiteWorker {
 public:
  explicit SiteWorker(SiteData data, ModeOptions mode = {});

  SiteId site_id() const { return data_.site_id; }
  std::int64_t n() const { return static_cast<std::int64_t>(data_.n()); }
  std::int64_t p() const { return static_cast<std::int64_t>(data_.p()); }

  void configure(const SessionConfig& session);
  bool configured() const { return session_.has_value(); }
  const SessionConfig& session() const;
  SiteSummary compute(Partition partition, const Theta& theta);

  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  SiteData data_;
  ModeOptions mode_;
  std::optional<SessionConfig> session_;
  SiteData train_;
  SiteData validation_;
  HermiteRule rule_;
  std::optional<double> warm_[2];
  std::vector<std::string> warnings_;
};

// Calls SiteWorker objects directly, ordered by site_id.
class InProcessProvider : public SummaryProvider {
 public:
  explicit InProcessProvider(std::vector<SiteData> sites, ModeOptions mode = {});

  std::int64_t num_params() const override;
  std::vector<SiteId> site_ids() const override;
  void configure(const SessionConfig& session) override;
  std::vector<SiteSummary> collect(Partition partition, const Theta& theta) override;

  std::size_t num_sites() const { return workers_.size(); }
  std::vector<std::string> warnings() const;

 private:
  std::vector<SiteWorker> workers_;
};

class FederationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Site-side protocol state machine, shared by the loopback and TCP
// transports. Feed each incoming message to handle() and send back the
// reply, if any.
class SiteAgent {
 public:
  explicit SiteAgent(SiteData data, ModeOptions mode = {});

  wire::Hello hello() const;
  std::optional<wire::Message> handle(const wire::Message& in);

  SiteId site_id() const { return worker_.site_id(); }
  bool finished() const { return finished_; }
  bool aborted() const { return !abort_reason_.empty(); }
  const std::string& abort_reason() const { return abort_reason_; }
  const std::optional<wire::Result>& result() const { return result_; }
  std::int64_t rounds_served() const { return rounds_served_; }

 private:
  wire::Message fail(const std::string& reason);

  SiteWorker worker_;
  std::int64_t last_round_ = 0;
  std::int64_t rounds_served_ = 0;
  bool finished_ = false;
  std::string abort_reason_;
  std::optional<wire::Result> result_;
};

// Runs sites in-process but passes every message through the wire codec,
// exactly as the TCP transport would.
class LoopbackProvider : public SummaryProvider {
 public:
  explicit LoopbackProvider(std::vector<SiteData> sites, ModeOptions mode = {});

  std::int64_t num_params() const override { return p_; }
  std::vector<SiteId> site_ids() const override;
  void configure(const SessionConfig& session) override;
  std::vector<SiteSummary> collect(Partition partition, const Theta& theta) override;
  void publish(const FitResult& result) override;

  const std::vector<SiteAgent>& agents() const { return agents_; }
  // Body sizes of the SUMMARY frames from the most recent round.
  const std::vector<std::size_t>& last_summary_bytes() const { return last_summary_bytes_; }

 private:
  std::optional<wire::Message> exchange(SiteAgent& agent, const wire::Message& out);

  std::vector<SiteAgent> agents_;
  std::int64_t p_ = 0;
  std::int64_t round_ = 0;
  std::vector<std::size_t> last_summary_bytes_;
};

// Checks ids are unique and dimensions agree; returns sites sorted by id.
std::vector<SiteData> prepare_sites(std::vector<SiteData> sites);

// Groups pooled rows by site id.
std::vector<SiteData> partition_by_site(const std::vector<SiteId>& site_ids, const Matrix& x,
                                        const Vector& y);

}  // namespace fedglmm

#endif  // FEDGLMM_TRANSPORT_HPP
