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

#ifndef FEDGLMM_IO_HPP
#define FEDGLMM_IO_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedglmm/datagen.hpp"
#include "fedglmm/model.hpp"

namespace fedglmm {

// Parse or I/O failure; line and column are 1-based, 0 when not applicable.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& path, std::size_t line, std::size_t column, const std::string& what);
  const std::string& path() const { return path_; }
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::string path_;
  std::size_t line_;
  std::size_t column_;
};

// Shortest text that reads back to the same double (17 significant digits).
std::string format_real(double v);

struct PooledData {
  std::vector<SiteId> site_ids;
  Matrix x;
  Vector y;
};

// Header must be exactly "site_id,y,x1,...,xp".
PooledData read_data_csv(const std::string& path);
std::vector<SiteData> load_sites(const std::string& path);
void write_data_csv(const std::string& path, const std::vector<SiteData>& sites);

std::string data_header(std::size_t p);

// "setting<S>_dataset<II>"
std::string dataset_stem(int setting_id, int dataset_index);

// Writes <dir>/<stem>.csv plus the <stem>_truth.csv (per row) and
// <stem>_sites.csv (per site) sidecars. Returns the data path.
std::string write_dataset(const GeneratedDataset& ds, const std::string& dir);
GeneratedDataset read_dataset(const std::string& data_path);

std::string truth_sidecar_path(const std::string& data_path);
std::string sites_sidecar_path(const std::string& data_path);

void write_truth_beta(const std::string& path, const Vector& beta);
Vector read_truth_beta(const std::string& path);

// "key = value" lines; '#' starts a comment line. Duplicate keys are errors.
using KeyValues = std::vector<std::pair<std::string, std::string>>;
KeyValues read_key_values(const std::string& path);
KeyValues parse_key_values(std::string_view text, const std::string& origin);
std::string format_key_values(const KeyValues& kv);

std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t v);
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);
std::string file_digest(const std::string& path);

// Simple CSV split on commas (no quoting, which none of our files need).
std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace fedglmm

#endif  // FEDGLMM_IO_HPP
