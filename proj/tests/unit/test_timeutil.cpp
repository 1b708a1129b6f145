#include "doctest.h"
#include "routerank/common.hpp"
#include "routerank/timeutil.hpp"

using namespace routerank;

TEST_CASE("known instants") {
  CHECK(to_timestamp({1970, 1, 1, 0, 0, 0}) == 0);
  CHECK(parse_iso8601("2024-03-04T00:00:00") == 1709510400);
  CHECK(parse_iso8601("2024-03-04T00:00:00Z") == 1709510400);
  CHECK(parse_iso8601("2000-02-29T12:34:56") == 951827696);
  CHECK(format_iso8601(951827696) == "2000-02-29T12:34:56");
}

TEST_CASE("weekday and hour") {
  const Timestamp mon = parse_iso8601("2024-03-04T08:30:00");
  CHECK(day_of_week(mon) == 0);
  CHECK(hour_of_day(mon) == 8);
  CHECK(day_of_week(mon + 6 * 86400) == 6);
  CHECK(day_of_week(0) == 3);  // 1970-01-01 was a Thursday
}

TEST_CASE("civil round trip") {
  for (Timestamp t = -86400 * 400; t < 86400LL * 365 * 60; t += 86400 * 37 + 3607) {
    CHECK(to_timestamp(to_civil(t)) == t);
    CHECK(parse_iso8601(format_iso8601(t)) == t);
  }
}

TEST_CASE("malformed timestamps") {
  CHECK_THROWS_AS(parse_iso8601("2024-03-04"), SchemaError);
  CHECK_THROWS_AS(parse_iso8601("2024-13-04T00:00:00"), SchemaError);
  CHECK_THROWS_AS(parse_iso8601("2024-03-04T25:00:00"), SchemaError);
  CHECK_THROWS_AS(parse_iso8601("2024-03-04T00:00:00+01"), SchemaError);
}
