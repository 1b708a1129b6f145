#include "routerank/timeutil.hpp"

#include <cstdio>

#include "routerank/common.hpp"

namespace routerank {

namespace {

// Howard Hinnant's days_from_civil / civil_from_days.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
  y = static_cast<int>(static_cast<std::int64_t>(yoe) + era * 400 + (m <= 2));
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

Timestamp to_timestamp(const CivilTime& ct) {
  return days_from_civil(ct.year, static_cast<unsigned>(ct.month), static_cast<unsigned>(ct.day)) * 86400 +
         ct.hour * 3600 + ct.minute * 60 + ct.second;
}

CivilTime to_civil(Timestamp ts) {
  CivilTime ct;
  const std::int64_t days = floor_div(ts, 86400);
  std::int64_t rem = ts - days * 86400;
  civil_from_days(days, ct.year, ct.month, ct.day);
  ct.hour = static_cast<int>(rem / 3600);
  rem %= 3600;
  ct.minute = static_cast<int>(rem / 60);
  ct.second = static_cast<int>(rem % 60);
  return ct;
}

std::string format_iso8601(Timestamp ts) {
  const CivilTime ct = to_civil(ts);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d", ct.year, ct.month, ct.day, ct.hour, ct.minute,
                ct.second);
  return buf;
}

Timestamp parse_iso8601(std::string_view s) {
  CivilTime ct;
  if (s.size() != 19 && !(s.size() == 20 && s.back() == 'Z'))
    throw SchemaError("bad ISO-8601 timestamp '" + std::string(s) + "'");
  const std::string str(s.substr(0, 19));
  char t = 0;
  if (std::sscanf(str.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d", &ct.year, &ct.month, &ct.day, &t, &ct.hour, &ct.minute,
                  &ct.second) != 7 ||
      t != 'T' || ct.month < 1 || ct.month > 12 || ct.day < 1 || ct.day > 31 || ct.hour > 23 || ct.minute > 59 ||
      ct.second > 60)
    throw SchemaError("bad ISO-8601 timestamp '" + std::string(s) + "'");
  return to_timestamp(ct);
}

int day_of_week(Timestamp ts) {
  // 1970-01-01 was a Thursday (index 3 with Monday = 0).
  const std::int64_t days = floor_div(ts, 86400);
  return static_cast<int>(((days % 7) + 7 + 3) % 7);
}

int hour_of_day(Timestamp ts) { return to_civil(ts).hour; }

}  // namespace routerank
