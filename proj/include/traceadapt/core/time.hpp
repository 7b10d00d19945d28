#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

namespace traceadapt {

/// Millisecond-resolution UTC instant. All timestamps in the pipeline use this.
using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

Timestamp now_utc();

/// Renders as `YYYY-MM-DDTHH:MM:SS.mmmZ`.
std::string format_utc(Timestamp t);

/// Parses ISO-8601 date-times with an optional fraction and a `Z` or `+HH:MM`
/// suffix. A bare date (`YYYY-MM-DD`) is midnight UTC. Text without a zone is
/// read as UTC.
std::optional<Timestamp> parse_iso8601(std::string_view text);

/// strptime-style parse of `text` using `format`, interpreting the result as
/// local time at `utc_offset` and converting to UTC. Trailing input is an error.
std::optional<Timestamp> parse_with_format(std::string_view text, const std::string& format,
                                           std::chrono::minutes utc_offset = std::chrono::minutes{0});

std::int64_t to_unix_millis(Timestamp t);
Timestamp from_unix_millis(std::int64_t ms);

}  // namespace traceadapt
