#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace routerank {

/// Seconds since 1970-01-01T00:00:00 in the local frame of the synthetic
/// world. No time zones: everything is treated as local civil time.
using Timestamp = std::int64_t;

struct CivilTime {
  int year = 1970;
  int month = 1;  // 1-12
  int day = 1;    // 1-31
  int hour = 0;
  int minute = 0;
  int second = 0;
};

Timestamp to_timestamp(const CivilTime& ct);
CivilTime to_civil(Timestamp ts);

/// "YYYY-MM-DDTHH:MM:SS"
std::string format_iso8601(Timestamp ts);
/// Accepts "YYYY-MM-DDTHH:MM:SS" with an optional trailing 'Z'.
Timestamp parse_iso8601(std::string_view s);

/// 0 = Monday ... 6 = Sunday.
int day_of_week(Timestamp ts);
int hour_of_day(Timestamp ts);

}  // namespace routerank
