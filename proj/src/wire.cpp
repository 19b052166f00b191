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

#include "fedglmm/wire.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <utility>

namespace fedglmm::wire {

namespace {

constexpr int kMaxDepth = 8;

[[noreturn]] void malformed(const std::string& why) {
  throw WireError(ErrorKind::MalformedFrame, "malformed frame: " + why);
}

bool same_real(double a, double b) {
  if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b);
  return a == b && std::signbit(a) == std::signbit(b);
}

bool same_vec(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (!same_real(a[i], b[i])) return false;
  return true;
}

bool same_vec(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!same_real(a[i], b[i])) return false;
  return true;
}

bool same_mat(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (!same_real(a.data()[i], b.data()[i])) return false;
  return true;
}

// ---- encoding ----

class Writer {
 public:
  explicit Writer(const char* type) {
    out_ = type;
    out_ += '{';
  }

  Writer& key(const char* k) {
    if (!first_) out_ += ';';
    first_ = false;
    out_ += k;
    out_ += '=';
    return *this;
  }

  void integer(std::int64_t v) { out_ += std::to_string(v); }
  void unsigned_integer(std::uint64_t v) { out_ += std::to_string(v); }
  void boolean(bool v) { out_ += v ? "true" : "false"; }
  void word(const char* w) { out_ += w; }

  void real(double v) {
    if (std::isnan(v)) {
      out_ += "nan";
    } else if (std::isinf(v)) {
      out_ += v > 0 ? "inf" : "-inf";
    } else {
      char buf[64];
      auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
      out_.append(buf, r.ptr);
    }
  }

  template <class Seq>
  void reals(const Seq& v) {
    out_ += '[';
    for (std::size_t i = 0; i < static_cast<std::size_t>(v.size()); ++i) {
      if (i) out_ += ',';
      real(v[i]);
    }
    out_ += ']';
  }

  void integers(const std::vector<std::int64_t>& v) {
    out_ += '[';
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out_ += ',';
      integer(v[i]);
    }
    out_ += ']';
  }

  void matrix(const Matrix& m) {
    out_ += '[';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      if (r) out_ += ',';
      reals(Vector(m.row(r).transpose()));
    }
    out_ += ']';
  }

  void string(const std::string& s) {
    out_ += '"';
    for (unsigned char c : s) {
      switch (c) {
        case '"': out_ += "\\\""; break;
        case '\\': out_ += "\\\\"; break;
        case '\n': out_ += "\\n"; break;
        case '\r': out_ += "\\r"; break;
        case '\t': out_ += "\\t"; break;
        default:
          if (c < 0x20 || c == 0x7f) {
            char buf[8];
            std::snprintf(buf, sizeof buf, "\\u%04x", c);
            out_ += buf;
          } else {
            out_ += static_cast<char>(c);
          }
      }
    }
    out_ += '"';
  }

  // Nested object: the callback writes its fields through a child writer.
  template <class F>
  void object(F&& fill) {
    Writer child("");
    fill(child);
    out_ += child.finish();
  }

  std::string finish() {
    out_ += '}';
    return std::move(out_);
  }

 private:
  std::string out_;
  bool first_ = true;
};

void write_summary(Writer& w, const SiteSummary& s) {
  w.key("beta_echo").reals(s.beta_echo);
  w.key("dtau").real(s.dtau);
  w.key("hessian").matrix(s.hessian);
  w.key("k_echo").integer(s.k_echo);
  w.key("lambda_echo").real(s.lambda_echo);
  w.key("loglik").real(s.loglik);
  w.key("mu_hat").real(s.mu_hat);
  w.key("n_i").integer(s.n_i);
  w.key("p").integer(s.p);
  w.key("score").reals(s.score);
}

struct BodyEncoder {
  std::string operator()(const Hello& m) const {
    Writer w("HELLO");
    w.key("n_i").integer(m.n_i);
    w.key("p").integer(m.p);
    w.key("protocol_version").integer(m.protocol_version);
    w.key("site_id").integer(m.site_id);
    return w.finish();
  }
  std::string operator()(const Config& m) const {
    Writer w("CONFIG");
    const auto& s = m.session;
    w.key("k").integer(s.method.order());
    w.key("lambda").real(s.lambda);
    w.key("method").word(s.method.kind == ApproximationMethod::Kind::LA ? "la" : "gh");
    w.key("penalize_intercept").boolean(s.penalize_intercept);
    w.key("split_ratio").real(s.split_ratio);
    w.key("split_seed").unsigned_integer(s.split_seed);
    return w.finish();
  }
  std::string operator()(const Compute& m) const {
    Writer w("COMPUTE");
    w.key("beta").reals(m.beta);
    w.key("partition").word(m.partition == Partition::Train ? "train" : "validation");
    w.key("round").integer(m.round);
    w.key("tau").real(m.tau);
    return w.finish();
  }
  std::string operator()(const Summary& m) const {
    Writer w("SUMMARY");
    w.key("payload").object([&](Writer& c) { write_summary(c, m.payload); });
    w.key("round").integer(m.round);
    return w.finish();
  }
  std::string operator()(const Result& m) const {
    Writer w("RESULT");
    w.key("aic").real(m.aic);
    w.key("beta_hat").reals(m.beta_hat);
    w.key("bic").real(m.bic);
    w.key("ci_high").reals(m.ci_high);
    w.key("ci_low").reals(m.ci_low);
    w.key("converged").boolean(m.converged);
    w.key("final_delta").real(m.final_delta);
    w.key("inference_available").boolean(m.inference_available);
    w.key("iterations").integer(m.iterations);
    w.key("lambda_hat").real(m.lambda_hat);
    w.key("loglik").real(m.loglik);
    w.key("mu_hats").reals(m.mu_hats);
    w.key("p_values").reals(m.p_values);
    w.key("site_ids").integers(m.site_ids);
    w.key("std_err").reals(m.std_err);
    w.key("tau_hat").real(m.tau_hat);
    w.key("z").reals(m.z);
    return w.finish();
  }
  std::string operator()(const Abort& m) const {
    Writer w("ABORT");
    w.key("reason").string(m.reason);
    return w.finish();
  }
  std::string operator()(const Bye&) const { return Writer("BYE").finish(); }
};

// ---- decoding ----

struct Value {
  enum class Kind { Atom, String, List, Object };
  Kind kind = Kind::Atom;
  std::string text;
  std::vector<Value> items;
  std::vector<std::pair<std::string, Value>> fields;
};

void validate_utf8(std::string_view s) {
  std::size_t i = 0;
  const auto n = s.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) {
      ++i;
      continue;
    }
    int len;
    std::uint32_t cp;
    if ((c & 0xe0) == 0xc0) {
      len = 2;
      cp = c & 0x1f;
    } else if ((c & 0xf0) == 0xe0) {
      len = 3;
      cp = c & 0x0f;
    } else if ((c & 0xf8) == 0xf0) {
      len = 4;
      cp = c & 0x07;
    } else {
      malformed("invalid UTF-8 lead byte");
    }
    if (i + len > n) malformed("truncated UTF-8 sequence");
    for (int k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xc0) != 0x80) malformed("invalid UTF-8 continuation byte");
      cp = (cp << 6) | (cc & 0x3f);
    }
    static constexpr std::uint32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < kMin[len] || cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff))
      malformed("invalid UTF-8 code point");
    i += len;
  }
}

class Parser {
 public:
  explicit Parser(std::string_view s) : s_(s) {}

  std::pair<std::string, Value> message() {
    std::string type;
    while (pos_ < s_.size() && s_[pos_] >= 'A' && s_[pos_] <= 'Z') type += s_[pos_++];
    if (type.empty()) malformed("missing message type");
    Value body = object(1);
    if (pos_ != s_.size()) malformed("trailing bytes after message");
    return {type, std::move(body)};
  }

 private:
  char peek() const {
    if (pos_ >= s_.size()) malformed("unexpected end of body");
    return s_[pos_];
  }

  void expect(char c) {
    if (peek() != c) malformed(std::string("expected '") + c + "'");
    ++pos_;
  }

  Value value(int depth) {
    if (depth > kMaxDepth) malformed("nesting too deep");
    const char c = peek();
    if (c == '{') return object(depth);
    if (c == '[') return list(depth);
    if (c == '"') return string();
    return atom();
  }

  Value object(int depth) {
    if (depth > kMaxDepth) malformed("nesting too deep");
    expect('{');
    Value v;
    v.kind = Value::Kind::Object;
    if (peek() == '}') {
      ++pos_;
      return v;
    }
    for (;;) {
      std::string k;
      while (pos_ < s_.size() && ((s_[pos_] >= 'a' && s_[pos_] <= 'z') || s_[pos_] == '_' ||
                                  (!k.empty() && s_[pos_] >= '0' && s_[pos_] <= '9')))
        k += s_[pos_++];
      if (k.empty()) malformed("expected key");
      expect('=');
      v.fields.emplace_back(std::move(k), value(depth + 1));
      if (peek() == ';') {
        ++pos_;
        continue;
      }
      expect('}');
      return v;
    }
  }

  Value list(int depth) {
    expect('[');
    Value v;
    v.kind = Value::Kind::List;
    if (peek() == ']') {
      ++pos_;
      return v;
    }
    for (;;) {
      v.items.push_back(value(depth + 1));
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      expect(']');
      return v;
    }
  }

  Value string() {
    expect('"');
    Value v;
    v.kind = Value::Kind::String;
    for (;;) {
      const char c = peek();
      ++pos_;
      if (c == '"') return v;
      if (static_cast<unsigned char>(c) < 0x20 || c == 0x7f) malformed("raw control byte in string");
      if (c != '\\') {
        v.text += c;
        continue;
      }
      const char e = peek();
      ++pos_;
      switch (e) {
        case '"': v.text += '"'; break;
        case '\\': v.text += '\\'; break;
        case 'n': v.text += '\n'; break;
        case 'r': v.text += '\r'; break;
        case 't': v.text += '\t'; break;
        case 'u': {
          if (pos_ + 4 > s_.size()) malformed("truncated escape");
          unsigned code = 0;
          auto r = std::from_chars(s_.data() + pos_, s_.data() + pos_ + 4, code, 16);
          if (r.ec != std::errc() || r.ptr != s_.data() + pos_ + 4 || !(code < 0x20 || code == 0x7f))
            malformed("invalid escape");
          v.text += static_cast<char>(code);
          pos_ += 4;
          break;
        }
        default: malformed("invalid escape");
      }
    }
  }

  Value atom() {
    Value v;
    while (pos_ < s_.size()) {
      const char c = s_[pos_];
      const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                      c == '.' || c == '-' || c == '+' || c == '_';
      if (!ok) break;
      v.text += c;
      ++pos_;
    }
    if (v.text.empty()) malformed("expected a value");
    return v;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

const Value& want(const Value& v, Value::Kind kind, const char* what) {
  if (v.kind != kind) malformed(std::string("wrong value kind for ") + what);
  return v;
}

std::int64_t as_int(const Value& v, const char* what) {
  want(v, Value::Kind::Atom, what);
  std::int64_t out = 0;
  const auto* b = v.text.data();
  const auto* e = b + v.text.size();
  auto r = std::from_chars(b, e, out);
  if (r.ec != std::errc() || r.ptr != e) malformed(std::string("bad integer for ") + what);
  return out;
}

std::uint64_t as_uint(const Value& v, const char* what) {
  want(v, Value::Kind::Atom, what);
  std::uint64_t out = 0;
  const auto* b = v.text.data();
  const auto* e = b + v.text.size();
  auto r = std::from_chars(b, e, out);
  if (r.ec != std::errc() || r.ptr != e) malformed(std::string("bad unsigned integer for ") + what);
  return out;
}

double as_real(const Value& v, const char* what) {
  want(v, Value::Kind::Atom, what);
  if (v.text == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (v.text == "inf") return std::numeric_limits<double>::infinity();
  if (v.text == "-inf") return -std::numeric_limits<double>::infinity();
  double out = 0;
  const auto* b = v.text.data();
  const auto* e = b + v.text.size();
  auto r = std::from_chars(b, e, out, std::chars_format::general);
  if (r.ec != std::errc() || r.ptr != e) malformed(std::string("bad real for ") + what);
  return out;
}

bool as_bool(const Value& v, const char* what) {
  want(v, Value::Kind::Atom, what);
  if (v.text == "true") return true;
  if (v.text == "false") return false;
  malformed(std::string("bad flag for ") + what);
}

Vector as_reals(const Value& v, const char* what) {
  want(v, Value::Kind::List, what);
  Vector out(v.items.size());
  for (std::size_t i = 0; i < v.items.size(); ++i) out[i] = as_real(v.items[i], what);
  return out;
}

std::vector<double> as_real_list(const Value& v, const char* what) {
  const Vector r = as_reals(v, what);
  return std::vector<double>(r.data(), r.data() + r.size());
}

std::vector<std::int64_t> as_ints(const Value& v, const char* what) {
  want(v, Value::Kind::List, what);
  std::vector<std::int64_t> out;
  for (const auto& i : v.items) out.push_back(as_int(i, what));
  return out;
}

Matrix as_matrix(const Value& v, std::int64_t cols, const char* what) {
  want(v, Value::Kind::List, what);
  Matrix m(v.items.size(), cols);
  for (std::size_t r = 0; r < v.items.size(); ++r) {
    const Vector row = as_reals(v.items[r], what);
    if (row.size() != cols) malformed(std::string("ragged matrix for ") + what);
    m.row(r) = row.transpose();
  }
  return m;
}

// Checks the object has exactly `keys` (sorted) and returns values in order.
std::vector<const Value*> fields(const Value& obj, std::initializer_list<const char*> keys,
                                 const char* what) {
  want(obj, Value::Kind::Object, what);
  std::vector<std::string_view> expected(keys.begin(), keys.end());
  for (std::size_t i = 0; i < obj.fields.size(); ++i) {
    const auto& k = obj.fields[i].first;
    if (std::find(expected.begin(), expected.end(), k) == expected.end())
      malformed("unknown key '" + k + "' in " + what);
    for (std::size_t j = 0; j < i; ++j)
      if (obj.fields[j].first == k) malformed("duplicate key '" + k + "' in " + what);
  }
  for (auto k : expected) {
    bool found = false;
    for (const auto& f : obj.fields) found = found || f.first == k;
    if (!found) malformed("missing key '" + std::string(k) + "' in " + what);
  }
  std::vector<const Value*> out;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (obj.fields[i].first != expected[i]) malformed(std::string("keys out of order in ") + what);
    out.push_back(&obj.fields[i].second);
  }
  return out;
}

SiteSummary read_summary(const Value& v) {
  auto f = fields(v,
                  {"beta_echo", "dtau", "hessian", "k_echo", "lambda_echo", "loglik", "mu_hat", "n_i",
                   "p", "score"},
                  "summary payload");
  SiteSummary s;
  s.p = as_int(*f[8], "p");
  if (s.p < 0) malformed("negative p");
  s.beta_echo = as_reals(*f[0], "beta_echo");
  s.dtau = as_real(*f[1], "dtau");
  s.hessian = as_matrix(*f[2], s.p, "hessian");
  s.k_echo = as_int(*f[3], "k_echo");
  s.lambda_echo = as_real(*f[4], "lambda_echo");
  s.loglik = as_real(*f[5], "loglik");
  s.mu_hat = as_real(*f[6], "mu_hat");
  s.n_i = as_int(*f[7], "n_i");
  s.score = as_reals(*f[9], "score");
  if (s.score.size() != s.p || s.hessian.rows() != s.p || s.beta_echo.size() != s.p)
    malformed("summary dimensions disagree with p");
  if (s.n_i < 0 || s.k_echo < 1) malformed("summary counts out of range");
  return s;
}

Message read_message(const std::string& type, const Value& body) {
  if (type == "HELLO") {
    auto f = fields(body, {"n_i", "p", "protocol_version", "site_id"}, "HELLO");
    Hello h{as_int(*f[3], "site_id"), as_int(*f[0], "n_i"), as_int(*f[1], "p"),
            as_int(*f[2], "protocol_version")};
    if (h.protocol_version != kProtocolVersion)
      throw WireError(ErrorKind::VersionMismatch,
                      "protocol version " + std::to_string(h.protocol_version) + " is not supported");
    if (h.n_i < 0 || h.p < 1) malformed("HELLO counts out of range");
    return h;
  }
  if (type == "CONFIG") {
    auto f = fields(body, {"k", "lambda", "method", "penalize_intercept", "split_ratio", "split_seed"},
                    "CONFIG");
    want(*f[2], Value::Kind::Atom, "method");
    Config c;
    const auto k = as_int(*f[0], "k");
    if (f[2]->text == "la") {
      if (k != 1) malformed("Laplace requires k=1");
      c.session.method = ApproximationMethod::laplace();
    } else if (f[2]->text == "gh") {
      if (k < 1 || k > kMaxHermiteRuleOrder) malformed("GH order out of range");
      c.session.method = ApproximationMethod::gauss_hermite(static_cast<int>(k));
    } else {
      malformed("unknown method");
    }
    c.session.lambda = as_real(*f[1], "lambda");
    c.session.penalize_intercept = as_bool(*f[3], "penalize_intercept");
    c.session.split_ratio = as_real(*f[4], "split_ratio");
    c.session.split_seed = as_uint(*f[5], "split_seed");
    return c;
  }
  if (type == "COMPUTE") {
    auto f = fields(body, {"beta", "partition", "round", "tau"}, "COMPUTE");
    Compute c;
    c.beta = as_reals(*f[0], "beta");
    want(*f[1], Value::Kind::Atom, "partition");
    if (f[1]->text == "train")
      c.partition = Partition::Train;
    else if (f[1]->text == "validation")
      c.partition = Partition::Validation;
    else
      malformed("unknown partition");
    c.round = as_int(*f[2], "round");
    c.tau = as_real(*f[3], "tau");
    return c;
  }
  if (type == "SUMMARY") {
    auto f = fields(body, {"payload", "round"}, "SUMMARY");
    return Summary{as_int(*f[1], "round"), read_summary(*f[0])};
  }
  if (type == "RESULT") {
    auto f = fields(body,
                    {"aic", "beta_hat", "bic", "ci_high", "ci_low", "converged", "final_delta",
                     "inference_available", "iterations", "lambda_hat", "loglik", "mu_hats",
                     "p_values", "site_ids", "std_err", "tau_hat", "z"},
                    "RESULT");
    Result r;
    r.aic = as_real(*f[0], "aic");
    r.beta_hat = as_reals(*f[1], "beta_hat");
    r.bic = as_real(*f[2], "bic");
    r.ci_high = as_reals(*f[3], "ci_high");
    r.ci_low = as_reals(*f[4], "ci_low");
    r.converged = as_bool(*f[5], "converged");
    r.final_delta = as_real(*f[6], "final_delta");
    r.inference_available = as_bool(*f[7], "inference_available");
    r.iterations = as_int(*f[8], "iterations");
    r.lambda_hat = as_real(*f[9], "lambda_hat");
    r.loglik = as_real(*f[10], "loglik");
    r.mu_hats = as_real_list(*f[11], "mu_hats");
    r.p_values = as_reals(*f[12], "p_values");
    r.site_ids = as_ints(*f[13], "site_ids");
    r.std_err = as_reals(*f[14], "std_err");
    r.tau_hat = as_real(*f[15], "tau_hat");
    r.z = as_reals(*f[16], "z");
    const auto p = r.beta_hat.size();
    if (r.std_err.size() != p || r.z.size() != p || r.p_values.size() != p || r.ci_low.size() != p ||
        r.ci_high.size() != p || r.mu_hats.size() != r.site_ids.size())
      malformed("RESULT dimensions disagree");
    return r;
  }
  if (type == "ABORT") {
    auto f = fields(body, {"reason"}, "ABORT");
    want(*f[0], Value::Kind::String, "reason");
    return Abort{f[0]->text};
  }
  if (type == "BYE") {
    fields(body, {}, "BYE");
    return Bye{};
  }
  malformed("unknown message type '" + type + "'");
}

std::uint32_t read_u32le(const char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}

}  // namespace

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedFrame: return "malformed-frame";
    case ErrorKind::Oversize: return "oversize";
    case ErrorKind::VersionMismatch: return "version-mismatch";
  }
  return "unknown";
}

const char* message_name(const Message& m) {
  static constexpr const char* kNames[] = {"HELLO", "CONFIG", "COMPUTE", "SUMMARY",
                                           "RESULT", "ABORT", "BYE"};
  return kNames[m.index()];
}

bool operator==(const Hello& a, const Hello& b) {
  return a.site_id == b.site_id && a.n_i == b.n_i && a.p == b.p &&
         a.protocol_version == b.protocol_version;
}

bool operator==(const Config& a, const Config& b) {
  return a.session.method == b.session.method && same_real(a.session.lambda, b.session.lambda) &&
         a.session.penalize_intercept == b.session.penalize_intercept &&
         same_real(a.session.split_ratio, b.session.split_ratio) &&
         a.session.split_seed == b.session.split_seed;
}

bool operator==(const Compute& a, const Compute& b) {
  return a.round == b.round && a.partition == b.partition && same_vec(a.beta, b.beta) &&
         same_real(a.tau, b.tau);
}

bool operator==(const Summary& a, const Summary& b) {
  const auto& x = a.payload;
  const auto& y = b.payload;
  return a.round == b.round && x.p == y.p && same_vec(x.score, y.score) &&
         same_mat(x.hessian, y.hessian) && same_real(x.loglik, y.loglik) &&
         same_real(x.mu_hat, y.mu_hat) && same_real(x.dtau, y.dtau) && x.n_i == y.n_i &&
         same_vec(x.beta_echo, y.beta_echo) && same_real(x.lambda_echo, y.lambda_echo) &&
         x.k_echo == y.k_echo;
}

bool operator==(const Result& a, const Result& b) {
  return same_vec(a.beta_hat, b.beta_hat) && same_real(a.tau_hat, b.tau_hat) &&
         same_vec(a.mu_hats, b.mu_hats) && a.site_ids == b.site_ids &&
         same_real(a.lambda_hat, b.lambda_hat) && same_real(a.loglik, b.loglik) &&
         same_real(a.aic, b.aic) && same_real(a.bic, b.bic) &&
         a.inference_available == b.inference_available && same_vec(a.std_err, b.std_err) &&
         same_vec(a.z, b.z) && same_vec(a.p_values, b.p_values) && same_vec(a.ci_low, b.ci_low) &&
         same_vec(a.ci_high, b.ci_high) && a.iterations == b.iterations &&
         a.converged == b.converged && same_real(a.final_delta, b.final_delta);
}

bool operator==(const Abort& a, const Abort& b) { return a.reason == b.reason; }
bool operator==(const Bye&, const Bye&) { return true; }

Result make_result(const FitResult& fit) {
  Result r;
  r.beta_hat = fit.beta_hat;
  r.tau_hat = fit.tau_hat;
  r.mu_hats = fit.mu_hats;
  r.site_ids = fit.site_ids;
  r.lambda_hat = fit.lambda_hat;
  r.loglik = fit.loglik;
  r.aic = fit.aic;
  r.bic = fit.bic;
  r.inference_available = fit.inference_available;
  r.std_err = fit.std_err;
  r.z = fit.z;
  r.p_values = fit.p_values;
  r.ci_low = fit.ci_low;
  r.ci_high = fit.ci_high;
  r.iterations = fit.iterations;
  r.converged = fit.converged;
  r.final_delta = fit.final_delta;
  return r;
}

std::size_t max_frame_bytes() {
  if (const char* env = std::getenv("FEDGLMM_MAX_FRAME")) {
    std::uint64_t v = 0;
    const auto* e = env + std::strlen(env);
    auto r = std::from_chars(env, e, v);
    if (r.ec == std::errc() && r.ptr == e && v > 0 && v <= 0xffffffffULL)
      return static_cast<std::size_t>(v);
  }
  return kDefaultMaxFrame;
}

std::string encode_body(const Message& m) { return std::visit(BodyEncoder{}, m); }

Message decode_body(std::string_view body) {
  validate_utf8(body);
  Parser parser(body);
  auto [type, value] = parser.message();
  return read_message(type, value);
}

std::string encode_message(const Message& m, std::size_t max_frame) {
  std::string body = encode_body(m);
  if (body.size() > max_frame || body.size() > 0xffffffffULL)
    throw WireError(ErrorKind::Oversize, "frame of " + std::to_string(body.size()) +
                                             " bytes exceeds the cap of " +
                                             std::to_string(max_frame));
  std::string out(4, '\0');
  const auto n = static_cast<std::uint32_t>(body.size());
  for (int i = 0; i < 4; ++i) out[i] = static_cast<char>((n >> (8 * i)) & 0xff);
  out += body;
  return out;
}

Message decode_message(std::string_view bytes, std::size_t max_frame) {
  if (bytes.size() < 4) malformed("truncated length prefix");
  const std::uint32_t n = read_u32le(bytes.data());
  if (n > max_frame)
    throw WireError(ErrorKind::Oversize, "declared frame length " + std::to_string(n) +
                                             " exceeds the cap of " + std::to_string(max_frame));
  if (bytes.size() < 4 + static_cast<std::size_t>(n)) malformed("truncated frame body");
  if (bytes.size() > 4 + static_cast<std::size_t>(n)) malformed("trailing bytes after frame");
  return decode_body(bytes.substr(4));
}

void FrameReader::feed(const char* data, std::size_t n) {
  if (pos_ > 0 && pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  } else if (pos_ > (1u << 20) && pos_ * 2 > buf_.size()) {
    buf_.erase(0, pos_);
    pos_ = 0;
  }
  buf_.append(data, n);
}

std::optional<std::string> FrameReader::next() {
  if (buffered() < 4) return std::nullopt;
  const std::uint32_t n = read_u32le(buf_.data() + pos_);
  if (n > max_frame_)
    throw WireError(ErrorKind::Oversize, "declared frame length " + std::to_string(n) +
                                             " exceeds the cap of " + std::to_string(max_frame_));
  if (buffered() < 4 + static_cast<std::size_t>(n)) return std::nullopt;
  std::string body = buf_.substr(pos_ + 4, n);
  pos_ += 4 + n;
  return body;
}

void FrameReader::finish() const {
  if (buffered() > 0)
    malformed("connection closed with " + std::to_string(buffered()) + " bytes of an incomplete frame");
}

}  // namespace fedglmm::wire
