#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

namespace semstab {

using EpochSeconds = std::int64_t;

// Accepts "YYYY-MM-DD", "YYYY-MM-DDTHH:MM:SS" with an optional trailing "Z"
// or "+00:00". Only UTC is supported.
inline std::optional<EpochSeconds> parse_utc(std::string_view text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  std::string buf(text);
  int consumed = 0;
  if (std::sscanf(buf.c_str(), "%4d-%2d-%2d%n", &y, &mo, &d, &consumed) != 3) return std::nullopt;
  std::string_view rest = text.substr(static_cast<std::size_t>(consumed));
  if (!rest.empty()) {
    if (rest.front() != 'T' && rest.front() != ' ') return std::nullopt;
    int used = 0;
    std::string tail(rest.substr(1));
    if (std::sscanf(tail.c_str(), "%2d:%2d:%2d%n", &h, &mi, &s, &used) != 3) return std::nullopt;
    std::string_view zone = std::string_view(tail).substr(static_cast<std::size_t>(used));
    if (!(zone.empty() || zone == "Z" || zone == "+00:00")) return std::nullopt;
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 60) return std::nullopt;
  const auto tp = sys_days{ymd} + hours{h} + minutes{mi} + seconds{s};
  return tp.time_since_epoch().count();
}

inline std::string format_utc(EpochSeconds t) {
  using namespace std::chrono;
  const sys_seconds tp{seconds{t}};
  const auto day_point = floor<days>(tp);
  const year_month_day ymd{day_point};
  const hh_mm_ss hms{tp - day_point};
  char out[32];
  std::snprintf(out, sizeof out, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return out;
}

// Months since 1970-01 for the given instant.
inline std::int64_t month_index(EpochSeconds t) {
  using namespace std::chrono;
  const year_month_day ymd{floor<days>(sys_seconds{seconds{t}})};
  return (static_cast<int>(ymd.year()) - 1970) * 12LL + (static_cast<unsigned>(ymd.month()) - 1);
}

inline std::string month_label(std::int64_t index) {
  const std::int64_t y = 1970 + (index >= 0 ? index / 12 : (index - 11) / 12);
  const std::int64_t m = index - (y - 1970) * 12 + 1;
  char out[48];
  std::snprintf(out, sizeof out, "%04lld-%02lld", static_cast<long long>(y), static_cast<long long>(m));
  return out;
}

}  // namespace semstab
