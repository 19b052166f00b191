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

#include "fedglmm/transport.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace fedglmm {

SiteWorker::SiteWorker(SiteData data, ModeOptions mode)
    : data_(std::move(data)), mode_(mode) {
  mode_.warm_start.reset();
  validate_site(data_);
}

const SessionConfig& SiteWorker::session() const {
  if (!session_) throw std::logic_error("site worker is not configured");
  return *session_;
}

void SiteWorker::configure(const SessionConfig& session) {
  session.method.validate();
  if (!(session.lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  const bool resplit = !session_ || session_->split_ratio != session.split_ratio ||
                       session_->split_seed != session.split_seed;
  if (!session_ || session_->method.order() != session.method.order())
    rule_ = hermite_rule(session.method.order());
  if (resplit) {
    warnings_.clear();
    if (session.split_ratio >= 1.0) {
      train_ = data_;
      validation_ = SiteData{data_.site_id, Matrix(0, data_.p()), Vector(0)};
    } else {
      auto split = train_validation_split({data_}, session.split_ratio, session.split_seed);
      train_ = std::move(split.train.front());
      validation_ = std::move(split.validation.front());
      warnings_ = std::move(split.warnings);
    }
    warm_[0].reset();
    warm_[1].reset();
  }
  session_ = session;
}

SiteSummary SiteWorker::compute(Partition partition, const Theta& theta) {
  const auto& s = session();
  const int slot = partition == Partition::Train ? 0 : 1;
  const SiteData& d = slot == 0 ? train_ : validation_;
  SummaryOptions opts;
  opts.penalize_intercept = s.penalize_intercept;
  opts.mode = mode_;
  opts.mode.warm_start = warm_[slot];
  SiteSummary out = site_summary(d, theta, s.method, s.lambda, rule_, opts);
  warm_[slot] = out.mu_hat;
  return out;
}

std::vector<SiteData> prepare_sites(std::vector<SiteData> sites) {
  if (sites.empty()) throw std::invalid_argument("no sites");
  std::sort(sites.begin(), sites.end(),
            [](const SiteData& a, const SiteData& b) { return a.site_id < b.site_id; });
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (i > 0 && sites[i].site_id == sites[i - 1].site_id)
      throw std::invalid_argument("duplicate site id " + std::to_string(sites[i].site_id));
    if (sites[i].p() != sites.front().p())
      throw std::invalid_argument("sites disagree on the number of covariates");
  }
  return sites;
}

std::vector<SiteData> partition_by_site(const std::vector<SiteId>& site_ids, const Matrix& x,
                                        const Vector& y) {
  if (static_cast<Eigen::Index>(site_ids.size()) != x.rows() || x.rows() != y.size())
    throw std::invalid_argument("row counts disagree");
  std::map<SiteId, std::vector<Eigen::Index>> rows;
  for (Eigen::Index i = 0; i < x.rows(); ++i) rows[site_ids[i]].push_back(i);
  std::vector<SiteData> out;
  for (const auto& [id, idx] : rows) {
    SiteData s{id, Matrix(idx.size(), x.cols()), Vector(idx.size())};
    for (std::size_t r = 0; r < idx.size(); ++r) {
      s.x.row(r) = x.row(idx[r]);
      s.y[r] = y[idx[r]];
    }
    out.push_back(std::move(s));
  }
  return out;
}

InProcessProvider::InProcessProvider(std::vector<SiteData> sites, ModeOptions mode) {
  for (auto& s : prepare_sites(std::move(sites))) workers_.emplace_back(std::move(s), mode);
}

std::int64_t InProcessProvider::num_params() const { return workers_.front().p(); }

std::vector<SiteId> InProcessProvider::site_ids() const {
  std::vector<SiteId> ids;
  for (const auto& w : workers_) ids.push_back(w.site_id());
  return ids;
}

void InProcessProvider::configure(const SessionConfig& session) {
  for (auto& w : workers_) w.configure(session);
}

std::vector<SiteSummary> InProcessProvider::collect(Partition partition, const Theta& theta) {
  std::vector<SiteSummary> out;
  out.reserve(workers_.size());
  for (auto& w : workers_) out.push_back(w.compute(partition, theta));
  return out;
}

std::vector<std::string> InProcessProvider::warnings() const {
  std::vector<std::string> out;
  for (const auto& w : workers_) out.insert(out.end(), w.warnings().begin(), w.warnings().end());
  return out;
}

}  // namespace fedglmm

namespace fedglmm {

SiteAgent::SiteAgent(SiteData data, ModeOptions mode) : worker_(std::move(data), mode) {}

wire::Hello SiteAgent::hello() const {
  return wire::Hello{worker_.site_id(), worker_.n(), worker_.p(), wire::kProtocolVersion};
}

wire::Message SiteAgent::fail(const std::string& reason) {
  finished_ = true;
  abort_reason_ = reason;
  return wire::Abort{reason};
}

std::optional<wire::Message> SiteAgent::handle(const wire::Message& in) {
  if (finished_) return std::nullopt;
  if (const auto* c = std::get_if<wire::Config>(&in)) {
    try {
      worker_.configure(c->session);
    } catch (const std::exception& e) {
      return fail(std::string("site ") + std::to_string(site_id()) + ": bad CONFIG: " + e.what());
    }
    return std::nullopt;
  }
  if (const auto* c = std::get_if<wire::Compute>(&in)) {
    if (!worker_.configured()) return fail("COMPUTE before CONFIG");
    if (c->round <= last_round_) return fail("round numbers must increase");
    last_round_ = c->round;
    try {
      SiteSummary s = worker_.compute(c->partition, Theta{c->beta, c->tau});
      ++rounds_served_;
      return wire::Summary{c->round, std::move(s)};
    } catch (const std::exception& e) {
      return fail(std::string("site ") + std::to_string(site_id()) + ": " + e.what());
    }
  }
  if (const auto* r = std::get_if<wire::Result>(&in)) {
    result_ = *r;
    return std::nullopt;
  }
  if (std::holds_alternative<wire::Bye>(in)) {
    finished_ = true;
    return std::nullopt;
  }
  if (const auto* a = std::get_if<wire::Abort>(&in)) {
    finished_ = true;
    abort_reason_ = a->reason.empty() ? "aborted" : a->reason;
    return std::nullopt;
  }
  return fail(std::string("unexpected ") + wire::message_name(in) + " at site");
}

LoopbackProvider::LoopbackProvider(std::vector<SiteData> sites, ModeOptions mode) {
  for (auto& s : prepare_sites(std::move(sites))) agents_.emplace_back(std::move(s), mode);
  for (auto& a : agents_) {
    const auto hello = wire::decode_message(wire::encode_message(a.hello()));
    p_ = std::get<wire::Hello>(hello).p;
  }
}

std::optional<wire::Message> LoopbackProvider::exchange(SiteAgent& agent, const wire::Message& out) {
  const auto delivered = wire::decode_message(wire::encode_message(out));
  auto reply = agent.handle(delivered);
  if (!reply) return std::nullopt;
  const auto bytes = wire::encode_message(*reply);
  if (std::holds_alternative<wire::Summary>(*reply)) last_summary_bytes_.push_back(bytes.size() - 4);
  return wire::decode_message(bytes);
}

std::vector<SiteId> LoopbackProvider::site_ids() const {
  std::vector<SiteId> ids;
  for (const auto& a : agents_) ids.push_back(a.site_id());
  return ids;
}

void LoopbackProvider::configure(const SessionConfig& session) {
  for (auto& a : agents_) {
    auto reply = exchange(a, wire::Config{session});
    if (reply) {
      if (const auto* ab = std::get_if<wire::Abort>(&*reply)) throw FederationError(ab->reason);
      throw FederationError("unexpected reply to CONFIG");
    }
  }
}

std::vector<SiteSummary> LoopbackProvider::collect(Partition partition, const Theta& theta) {
  ++round_;
  last_summary_bytes_.clear();
  const wire::Compute msg{round_, partition, theta.beta, theta.tau};
  std::vector<SiteSummary> out;
  out.reserve(agents_.size());
  for (auto& a : agents_) {
    auto reply = exchange(a, msg);
    if (!reply) throw FederationError("site " + std::to_string(a.site_id()) + " did not answer");
    if (const auto* ab = std::get_if<wire::Abort>(&*reply)) {
      for (auto& other : agents_)
        if (&other != &a) exchange(other, wire::Abort{ab->reason});
      throw FederationError(ab->reason);
    }
    auto* s = std::get_if<wire::Summary>(&*reply);
    if (!s || s->round != round_) throw FederationError("SUMMARY does not echo the round");
    out.push_back(std::move(s->payload));
  }
  return out;
}

void LoopbackProvider::publish(const FitResult& result) {
  for (auto& a : agents_) {
    exchange(a, wire::make_result(result));
    exchange(a, wire::Bye{});
  }
}

}  // namespace fedglmm
