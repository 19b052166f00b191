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

#include "fedglmm/io.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "fedglmm/transport.hpp"

namespace fedglmm {

namespace fs = std::filesystem;

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::vector<std::size_t>> columns;  // 1-based start column of each field
};

CsvTable read_csv(const std::string& path) {
  const std::string text = read_file(path);
  CsvTable t;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      if (pos >= text.size()) break;
      throw DataError(path, line_no, 1, "empty line");
    }
    auto fields = split_csv_line(line);
    std::vector<std::size_t> cols;
    std::size_t c = 1;
    for (const auto& f : fields) {
      cols.push_back(c);
      c += f.size() + 1;
    }
    if (line_no == 1) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw DataError(path, line_no, fields.size() < t.header.size() ? line.size() + 1 : cols[t.header.size()],
                      "expected " + std::to_string(t.header.size()) + " fields, found " +
                          std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.columns.push_back(std::move(cols));
  }
  if (t.header.empty()) throw DataError(path, 1, 1, "missing header");
  return t;
}

double parse_real(const CsvTable& t, std::size_t r, std::size_t c, const std::string& path) {
  const auto& s = t.rows[r][c];
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
    throw DataError(path, r + 2, t.columns[r][c], "'" + s + "' is not a finite number");
  return v;
}

std::int64_t parse_int(const CsvTable& t, std::size_t r, std::size_t c, const std::string& path) {
  const auto& s = t.rows[r][c];
  std::int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError(path, r + 2, t.columns[r][c], "'" + s + "' is not an integer");
  return v;
}

void expect_header(const CsvTable& t, const std::string& expected, const std::string& path) {
  std::string got;
  for (std::size_t i = 0; i < t.header.size(); ++i) got += (i ? "," : "") + t.header[i];
  if (got != expected) throw DataError(path, 1, 1, "header must be '" + expected + "', found '" + got + "'");
}

std::string strip_suffix(const std::string& path, const std::string& suffix) {
  if (path.size() >= suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0)
    return path.substr(0, path.size() - suffix.size());
  return path;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

DataError::DataError(const std::string& path, std::size_t line, std::size_t column,
                     const std::string& what)
    : std::runtime_error(path + (line ? ":" + std::to_string(line) + ":" + std::to_string(column) : "") +
                         ": " + what),
      path_(path),
      line_(line),
      column_(column) {}

std::string format_real(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      return out;
    }
    out.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string data_header(std::size_t p) {
  std::string h = "site_id,y";
  for (std::size_t j = 1; j <= p; ++j) h += ",x" + std::to_string(j);
  return h;
}

PooledData read_data_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header.size() < 3) throw DataError(path, 1, 1, "need site_id, y and at least x1");
  const std::size_t p = t.header.size() - 2;
  expect_header(t, data_header(p), path);
  PooledData d;
  const auto n = t.rows.size();
  if (n == 0) throw DataError(path, 2, 1, "no data rows");
  d.x.resize(n, p);
  d.y.resize(n);
  d.site_ids.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    d.site_ids[r] = parse_int(t, r, 0, path);
    const auto y = parse_int(t, r, 1, path);
    if (y != 0 && y != 1) throw DataError(path, r + 2, t.columns[r][1], "outcome must be 0 or 1");
    d.y[r] = static_cast<double>(y);
    for (std::size_t j = 0; j < p; ++j) d.x(r, j) = parse_real(t, r, 2 + j, path);
    if (d.x(r, 0) != 1.0) throw DataError(path, r + 2, t.columns[r][2], "x1 is the intercept column and must be 1");
  }
  return d;
}

std::vector<SiteData> load_sites(const std::string& path) {
  const PooledData d = read_data_csv(path);
  return partition_by_site(d.site_ids, d.x, d.y);
}

void write_data_csv(const std::string& path, const std::vector<SiteData>& sites) {
  if (sites.empty()) throw DataError(path, 0, 0, "no sites to write");
  std::string out = data_header(sites.front().p()) + "\n";
  for (const auto& s : sites)
    for (Eigen::Index r = 0; r < s.x.rows(); ++r) {
      out += std::to_string(s.site_id);
      out += s.y[r] > 0.5 ? ",1" : ",0";
      for (Eigen::Index c = 0; c < s.x.cols(); ++c) out += "," + format_real(s.x(r, c));
      out += '\n';
    }
  write_file(path, out);
}

std::string dataset_stem(int setting_id, int dataset_index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "setting%d_dataset%02d", setting_id, dataset_index + 1);
  return buf;
}

std::string truth_sidecar_path(const std::string& data_path) {
  return strip_suffix(data_path, ".csv") + "_truth.csv";
}

std::string sites_sidecar_path(const std::string& data_path) {
  return strip_suffix(data_path, ".csv") + "_sites.csv";
}

std::string write_dataset(const GeneratedDataset& ds, const std::string& dir) {
  const std::string data_path = (fs::path(dir) / (dataset_stem(ds.setting_id, ds.dataset_index) + ".csv")).string();
  write_data_csv(data_path, ds.sites);

  std::string truth = "site_id,log_odds,tp,tn,fp,fn\n";
  for (const auto& r : ds.rows)
    truth += std::to_string(r.site_id) + "," + format_real(r.log_odds) + "," + std::to_string(r.tp) + "," +
             std::to_string(r.tn) + "," + std::to_string(r.fp) + "," + std::to_string(r.fn) + "\n";
  write_file(truth_sidecar_path(data_path), truth);

  std::string sites = "site_id,mu1,mu2,mu3\n";
  for (const auto& s : ds.site_truth)
    sites += std::to_string(s.site_id) + "," + format_real(s.mu[0]) + "," + format_real(s.mu[1]) + "," +
             format_real(s.mu[2]) + "\n";
  write_file(sites_sidecar_path(data_path), sites);
  return data_path;
}

GeneratedDataset read_dataset(const std::string& data_path) {
  GeneratedDataset ds;
  const std::string stem = fs::path(data_path).stem().string();
  int s = 0, i = 0;
  char tail = 0;
  if (std::sscanf(stem.c_str(), "setting%d_dataset%d%c", &s, &i, &tail) == 2) {
    ds.setting_id = s;
    ds.dataset_index = i - 1;
  }
  const PooledData d = read_data_csv(data_path);
  // Keep file order of sites (ascending id when written by write_dataset).
  ds.sites = partition_by_site(d.site_ids, d.x, d.y);

  const std::string truth_path = truth_sidecar_path(data_path);
  const CsvTable t = read_csv(truth_path);
  expect_header(t, "site_id,log_odds,tp,tn,fp,fn", truth_path);
  if (t.rows.size() != d.site_ids.size())
    throw DataError(truth_path, 0, 0, "row count does not match " + data_path);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    RowTruth rt;
    rt.site_id = parse_int(t, r, 0, truth_path);
    rt.log_odds = parse_real(t, r, 1, truth_path);
    rt.tp = static_cast<int>(parse_int(t, r, 2, truth_path));
    rt.tn = static_cast<int>(parse_int(t, r, 3, truth_path));
    rt.fp = static_cast<int>(parse_int(t, r, 4, truth_path));
    rt.fn = static_cast<int>(parse_int(t, r, 5, truth_path));
    if (rt.site_id != d.site_ids[r]) throw DataError(truth_path, r + 2, 1, "site id does not match the data file");
    ds.rows.push_back(rt);
  }

  const std::string sites_path = sites_sidecar_path(data_path);
  const CsvTable st = read_csv(sites_path);
  expect_header(st, "site_id,mu1,mu2,mu3", sites_path);
  for (std::size_t r = 0; r < st.rows.size(); ++r) {
    SiteTruth s;
    s.site_id = parse_int(st, r, 0, sites_path);
    for (int k = 0; k < 3; ++k) s.mu[k] = parse_real(st, r, 1 + k, sites_path);
    ds.site_truth.push_back(s);
  }

  const auto beta_path = (fs::path(data_path).parent_path() / "truth_beta.csv").string();
  if (fs::exists(beta_path)) ds.true_beta = read_truth_beta(beta_path);
  return ds;
}

void write_truth_beta(const std::string& path, const Vector& beta) {
  std::string out = "term,beta\n";
  for (Eigen::Index j = 0; j < beta.size(); ++j)
    out += "x" + std::to_string(j + 1) + "," + format_real(beta[j]) + "\n";
  write_file(path, out);
}

Vector read_truth_beta(const std::string& path) {
  const CsvTable t = read_csv(path);
  expect_header(t, "term,beta", path);
  Vector b(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (t.rows[r][0] != "x" + std::to_string(r + 1))
      throw DataError(path, r + 2, 1, "expected term x" + std::to_string(r + 1));
    b[r] = parse_real(t, r, 1, path);
  }
  return b;
}

KeyValues parse_key_values(std::string_view text, const std::string& origin) {
  KeyValues kv;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view raw = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw DataError(origin, line_no, raw.find_first_not_of(" \t") + 1, "expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw DataError(origin, line_no, raw.find_first_not_of(" \t") + 1, "empty key");
    for (char c : key)
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
        throw DataError(origin, line_no, raw.find(key) + 1, "invalid key '" + key + "'");
    for (const auto& [k, v] : kv)
      if (k == key) throw DataError(origin, line_no, raw.find(key) + 1, "duplicate key '" + key + "'");
    kv.emplace_back(key, value);
    if (end == text.size()) break;
  }
  return kv;
}

KeyValues read_key_values(const std::string& path) { return parse_key_values(read_file(path), path); }

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path, 0, 0, "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw DataError(path, 0, 0, "read failed");
  return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(path, 0, 0, "cannot open for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.close();
  if (!out) throw DataError(path, 0, 0, "write failed");
}

std::string file_digest(const std::string& path) { return "fnv1a64:" + hex64(fnv1a64(read_file(path))); }

}  // namespace fedglmm
