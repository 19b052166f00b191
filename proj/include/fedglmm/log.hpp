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

#ifndef FEDGLMM_LOG_HPP
#define FEDGLMM_LOG_HPP

#include <optional>
#include <string>
#include <string_view>

namespace fedglmm {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

std::optional<LogLevel> parse_log_level(std::string_view text);

// Initial level comes from FEDGLMM_LOG (debug|info|warn|error|off), default warn.
LogLevel log_level();
void set_log_level(LogLevel level);

// Writes "[level] message" to stderr when `level` is enabled. Thread-safe.
void log_message(LogLevel level, const std::string& message);

}  // namespace fedglmm

#endif  // FEDGLMM_LOG_HPP
