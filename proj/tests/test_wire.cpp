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

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "doctest.h"
#include "fedglmm/wire.hpp"
#include "wire_corpus.hpp"
#include "wire_golden.hpp"

using namespace fedglmm;
using namespace fedglmm::wire;
using fedglmm::testing::golden_messages;
using fedglmm::testing::load_golden;

namespace {

ErrorKind error_of(std::string_view bytes) {
  try {
    decode_message(bytes);
  } catch (const WireError& e) {
    return e.kind();
  }
  FAIL("expected a wire error");
  return ErrorKind::MalformedFrame;
}

std::string frame(const std::string& body) {
  std::string out(4, '\0');
  const auto n = static_cast<std::uint32_t>(body.size());
  for (int i = 0; i < 4; ++i) out[i] = static_cast<char>((n >> (8 * i)) & 0xff);
  return out + body;
}

}  // namespace

TEST_CASE("golden frames for every message type") {
  const auto golden = load_golden();
  const auto msgs = golden_messages();
  REQUIRE(golden.size() == 7);
  for (const auto& m : msgs) {
    CAPTURE(message_name(m));
    const auto it = golden.find(message_name(m));
    REQUIRE(it != golden.end());
    CHECK(encode_message(m) == it->second);
    CHECK(decode_message(it->second) == m);
  }
  CHECK(encode_message(Bye{}) == std::string("\x05\x00\x00\x00" "BYE{}", 9));
}

TEST_CASE("reals round-trip exactly") {
  Compute c{1, Partition::Train, Vector::Constant(1, 0.1), 0.1};
  const auto back = std::get<Compute>(decode_message(encode_message(c)));
  CHECK(back.beta[0] == 0.1);
  CHECK(back.tau == 0.1);
  CHECK(encode_body(c).find("0.10000000000000001") != std::string::npos);
}

TEST_CASE("randomized corpus round-trips and encodes injectively") {
  testing::MessageCorpus corpus(20260101);
  std::unordered_map<std::string, Message> seen;
  int collisions = 0;
  for (int i = 0; i < 10000; ++i) {
    const Message m = corpus.next();
    const std::string bytes = encode_message(m);
    const Message back = decode_message(bytes);
    if (!(back == m)) {
      FAIL_CHECK("round trip failed for " << encode_body(m));
      continue;
    }
    CHECK(encode_message(back) == bytes);
    auto [it, inserted] = seen.emplace(bytes, m);
    if (!inserted && !(it->second == m)) ++collisions;
  }
  CHECK(collisions == 0);
}

TEST_CASE("strict schema") {
  CHECK(error_of(frame("HELLO{n_i=1;p=2;protocol_version=1;site_id=3;x=1}")) == ErrorKind::MalformedFrame);
  CHECK(error_of(frame("HELLO{n_i=1;p=2;protocol_version=1}")) == ErrorKind::MalformedFrame);
  CHECK(error_of(frame("HELLO{n_i=1;n_i=1;p=2;protocol_version=1;site_id=3}")) == ErrorKind::MalformedFrame);
  CHECK(error_of(frame("HELLO{p=2;n_i=1;protocol_version=1;site_id=3}")) == ErrorKind::MalformedFrame);
  CHECK(error_of(frame("HELLO{n_i=1;p=2;protocol_version=2;site_id=3}")) == ErrorKind::VersionMismatch);
  CHECK(error_of(frame("HELLO{n_i=1.5;p=2;protocol_version=1;site_id=3}")) == ErrorKind::MalformedFrame);
  CHECK(error_of(frame("PING{}")) == ErrorKind::MalformedFrame);
  CHECK(error_of(frame("BYE{} ")) == ErrorKind::MalformedFrame);
  CHECK(error_of(frame("ABORT{reason=\"\xff\"}")) == ErrorKind::MalformedFrame);
  CHECK(error_of(frame("ABORT{reason=\"\xc0\xaf\"}")) == ErrorKind::MalformedFrame);
  CHECK(error_of(frame("ABORT{reason=\"a\nb\"}")) == ErrorKind::MalformedFrame);
  CHECK(error_of(frame("COMPUTE{beta=[1,2];partition=test;round=1;tau=1}")) == ErrorKind::MalformedFrame);
  CHECK(error_of(frame("CONFIG{k=2;lambda=0;method=la;penalize_intercept=false;split_ratio=1;split_seed=0}")) ==
        ErrorKind::MalformedFrame);
  std::string deep = "ABORT{reason=";
  for (int i = 0; i < 20; ++i) deep += "[";
  CHECK(error_of(frame(deep)) == ErrorKind::MalformedFrame);
  // Summary dimensions must agree with p.
  CHECK(error_of(frame("SUMMARY{payload={beta_echo=[1];dtau=0;hessian=[[1,2]];k_echo=1;lambda_echo=0;"
                       "loglik=0;mu_hat=0;n_i=1;p=1;score=[1]};round=1}")) == ErrorKind::MalformedFrame);
}

TEST_CASE("framing errors") {
  const std::string bye = encode_message(Bye{});
  CHECK(error_of(bye.substr(0, 3)) == ErrorKind::MalformedFrame);
  CHECK(error_of(bye.substr(0, 6)) == ErrorKind::MalformedFrame);
  CHECK(error_of(bye + "x") == ErrorKind::MalformedFrame);
  std::string huge("\xff\xff\xff\x7f", 4);
  CHECK(error_of(huge) == ErrorKind::Oversize);
  CHECK_THROWS_AS(encode_message(Abort{std::string(100, 'a')}, 50), WireError);
  try {
    encode_message(Abort{std::string(100, 'a')}, 50);
  } catch (const WireError& e) {
    CHECK(e.kind() == ErrorKind::Oversize);
  }

  // Length says 100 but only 50 arrive before the peer closes.
  FrameReader reader;
  std::string partial("\x64\x00\x00\x00", 4);
  partial += std::string(50, 'a');
  reader.feed(partial);
  CHECK_FALSE(reader.next().has_value());
  try {
    reader.finish();
    FAIL("expected malformed frame");
  } catch (const WireError& e) {
    CHECK(e.kind() == ErrorKind::MalformedFrame);
  }
}

TEST_CASE("frame reader resumes across arbitrary splits") {
  testing::MessageCorpus corpus(7);
  std::vector<Message> msgs;
  std::string stream;
  for (int i = 0; i < 200; ++i) {
    msgs.push_back(corpus.next());
    stream += encode_message(msgs.back());
  }
  FrameReader reader;
  std::vector<Message> got;
  std::size_t pos = 0;
  while (pos < stream.size()) {
    const std::size_t n = std::min<std::size_t>(stream.size() - pos, 1 + corpus.pick(97));
    reader.feed(stream.data() + pos, n);
    pos += n;
    while (auto body = reader.next()) got.push_back(decode_body(*body));
  }
  reader.finish();
  REQUIRE(got.size() == msgs.size());
  for (std::size_t i = 0; i < msgs.size(); ++i) CHECK(got[i] == msgs[i]);

  FrameReader small(16);
  small.feed(encode_message(Abort{std::string(40, 'x')}));
  CHECK_THROWS_AS(small.next(), WireError);
}

TEST_CASE("fuzzed frames never crash") {
  testing::MessageCorpus corpus(99);
  const auto golden = load_golden();
  std::vector<std::string> seeds;
  for (const auto& [k, v] : golden) seeds.push_back(v);
  int decoded = 0, rejected = 0;
  for (int i = 0; i < 20000; ++i) {
    std::string bytes;
    if (corpus.pick(4) == 0) {
      const auto n = corpus.pick(64);
      for (std::uint64_t j = 0; j < n; ++j) bytes += static_cast<char>(corpus.pick(256));
    } else {
      bytes = seeds[corpus.pick(seeds.size())];
      const auto edits = 1 + corpus.pick(4);
      for (std::uint64_t e = 0; e < edits && !bytes.empty(); ++e) {
        const auto at = corpus.pick(bytes.size());
        switch (corpus.pick(3)) {
          case 0: bytes[at] = static_cast<char>(corpus.pick(256)); break;
          case 1: bytes.erase(at, 1); break;
          default: bytes.insert(at, 1, static_cast<char>(corpus.pick(256)));
        }
      }
    }
    try {
      decode_message(bytes);
      ++decoded;
    } catch (const WireError&) {
      ++rejected;
    }
  }
  CHECK(decoded + rejected == 20000);
  CHECK(rejected > 0);
}

TEST_CASE("max frame size from the environment") {
  ::setenv("FEDGLMM_MAX_FRAME", "1024", 1);
  CHECK(max_frame_bytes() == 1024);
  ::setenv("FEDGLMM_MAX_FRAME", "junk", 1);
  CHECK(max_frame_bytes() == kDefaultMaxFrame);
  ::unsetenv("FEDGLMM_MAX_FRAME");
  CHECK(max_frame_bytes() == kDefaultMaxFrame);
}
