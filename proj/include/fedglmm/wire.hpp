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

#ifndef FEDGLMM_WIRE_HPP
#define FEDGLMM_WIRE_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fedglmm/coordinator.hpp"

namespace fedglmm::wire {

inline constexpr std::int64_t kProtocolVersion = 1;
inline constexpr std::size_t kDefaultMaxFrame = 64u * 1024u * 1024u;

enum class ErrorKind { MalformedFrame, Oversize, VersionMismatch };

class WireError : public std::runtime_error {
 public:
  WireError(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

const char* error_kind_name(ErrorKind kind);

struct Hello {
  SiteId site_id = 0;
  std::int64_t n_i = 0;
  std::int64_t p = 0;
  std::int64_t protocol_version = kProtocolVersion;
};

struct Config {
  SessionConfig session;
};

struct Compute {
  std::int64_t round = 0;
  Partition partition = Partition::Train;
  Vector beta;
  double tau = 1.0;
};

struct Summary {
  std::int64_t round = 0;
  SiteSummary payload;
};

// The public part of a FitResult.
struct Result {
  Vector beta_hat;
  double tau_hat = 0.0;
  std::vector<double> mu_hats;
  std::vector<SiteId> site_ids;
  double lambda_hat = 0.0;
  double loglik = 0.0;
  double aic = 0.0;
  double bic = 0.0;
  bool inference_available = false;
  Vector std_err;
  Vector z;
  Vector p_values;
  Vector ci_low;
  Vector ci_high;
  std::int64_t iterations = 0;
  bool converged = false;
  double final_delta = 0.0;
};

struct Abort {
  std::string reason;
};

struct Bye {};

using Message = std::variant<Hello, Config, Compute, Summary, Result, Abort, Bye>;

const char* message_name(const Message& m);

// Equality treats two NaNs as equal and distinguishes +0 from -0, so it is
// exactly "same bits after a round trip".
bool operator==(const Hello& a, const Hello& b);
bool operator==(const Config& a, const Config& b);
bool operator==(const Compute& a, const Compute& b);
bool operator==(const Summary& a, const Summary& b);
bool operator==(const Result& a, const Result& b);
bool operator==(const Abort& a, const Abort& b);
bool operator==(const Bye& a, const Bye& b);

Result make_result(const FitResult& fit);

// Frame cap from FEDGLMM_MAX_FRAME if set, else 64 MiB.
std::size_t max_frame_bytes();

std::string encode_body(const Message& m);
Message decode_body(std::string_view body);

// Length-prefixed frame: u32 little-endian byte count, then the body.
std::string encode_message(const Message& m, std::size_t max_frame = max_frame_bytes());
// Decodes exactly one complete frame; trailing or missing bytes are errors.
Message decode_message(std::string_view bytes, std::size_t max_frame = max_frame_bytes());

// Incremental framing over a byte stream. Feed bytes as they arrive and pull
// complete bodies; an oversize length prefix is rejected before buffering.
class FrameReader {
 public:
  explicit FrameReader(std::size_t max_frame = max_frame_bytes()) : max_frame_(max_frame) {}

  void feed(const char* data, std::size_t n);
  void feed(std::string_view s) { feed(s.data(), s.size()); }
  std::optional<std::string> next();
  // Call when the peer closed; throws MalformedFrame if a frame is incomplete.
  void finish() const;
  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  std::size_t max_frame_;
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace fedglmm::wire

#endif  // FEDGLMM_WIRE_HPP
