#include "ragdesk/common.hpp"

#include <openssl/evp.h>

#include <array>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <ctime>

namespace ragdesk {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::unsupported_format: return "unsupported_format";
        case ErrorCode::empty_acl: return "empty_acl";
        case ErrorCode::config_invalid: return "config_invalid";
        case ErrorCode::unknown_template: return "unknown_template";
        case ErrorCode::unknown_model: return "unknown_model";
        case ErrorCode::unknown_subscription: return "unknown_subscription";
        case ErrorCode::quota_exceeded: return "quota_exceeded";
        case ErrorCode::rate_limited: return "rate_limited";
        case ErrorCode::provider_timeout: return "provider_timeout";
        case ErrorCode::provider_error: return "provider_error";
        case ErrorCode::unauthorized: return "unauthorized";
        case ErrorCode::empty_suite: return "empty_suite";
        case ErrorCode::suite_mismatch: return "suite_mismatch";
        case ErrorCode::not_found: return "not_found";
        case ErrorCode::bad_request: return "bad_request";
        case ErrorCode::validation: return "validation";
    }
    return "unknown";
}

std::string_view to_string(Sensitivity s) {
    switch (s) {
        case Sensitivity::public_: return "public";
        case Sensitivity::internal: return "internal";
        case Sensitivity::confidential: return "confidential";
        case Sensitivity::restricted: return "restricted";
    }
    return "internal";
}

Sensitivity parse_sensitivity(std::string_view text) {
    if (text == "public") return Sensitivity::public_;
    if (text == "internal") return Sensitivity::internal;
    if (text == "confidential") return Sensitivity::confidential;
    if (text == "restricted") return Sensitivity::restricted;
    throw Error(ErrorCode::validation, "unknown sensitivity '" + std::string(text) + "'");
}

Money Money::parse(std::string_view text) {
    const std::string original(text);
    auto fail = [&]() -> Money {
        throw Error(ErrorCode::validation, "invalid decimal amount '" + original + "'");
    };
    if (text.empty()) return fail();
    bool negative = false;
    if (text.front() == '-') {
        negative = true;
        text.remove_prefix(1);
    }
    const auto dot = text.find('.');
    const std::string_view whole = text.substr(0, dot);
    std::string_view frac = dot == std::string_view::npos ? std::string_view{} : text.substr(dot + 1);
    if (whole.empty() && frac.empty()) return fail();
    if (frac.size() > 6) return fail();
    for (char c : whole) {
        if (!std::isdigit(static_cast<unsigned char>(c))) return fail();
    }
    for (char c : frac) {
        if (!std::isdigit(static_cast<unsigned char>(c))) return fail();
    }
    std::int64_t units = 0;
    if (!whole.empty()) {
        auto [ptr, ec] = std::from_chars(whole.data(), whole.data() + whole.size(), units);
        if (ec != std::errc{} || units > 9'000'000'000'000LL) return fail();
    }
    std::int64_t micros_part = 0;
    for (std::size_t i = 0; i < 6; ++i) {
        micros_part = micros_part * 10 + (i < frac.size() ? frac[i] - '0' : 0);
    }
    const std::int64_t total = units * 1'000'000 + micros_part;
    return Money{negative ? -total : total};
}

std::string Money::to_string() const {
    const bool negative = micros < 0;
    const std::uint64_t mag = negative ? static_cast<std::uint64_t>(-(micros + 1)) + 1
                                       : static_cast<std::uint64_t>(micros);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%llu.%06llu", negative ? "-" : "",
                  static_cast<unsigned long long>(mag / 1'000'000),
                  static_cast<unsigned long long>(mag % 1'000'000));
    return buf;
}

namespace {

__extension__ typedef __int128 i128;

// n / 1000 with ties to even.
std::int64_t div1000_half_even(i128 n) {
    const bool negative = n < 0;
    const i128 mag = negative ? -n : n;
    i128 q = mag / 1000;
    const i128 r = mag % 1000;
    if (r > 500 || (r == 500 && (q % 2) == 1)) ++q;
    return static_cast<std::int64_t>(negative ? -q : q);
}

}  // namespace

Money cost_for_tokens(std::int64_t tokens, Money price_per_1k) {
    return Money{div1000_half_even(static_cast<i128>(tokens) * price_per_1k.micros)};
}

Money request_cost(std::int64_t prompt_tokens, Money prompt_per_1k,
                   std::int64_t completion_tokens, Money completion_per_1k) {
    const i128 n = static_cast<i128>(prompt_tokens) * prompt_per_1k.micros +
                     static_cast<i128>(completion_tokens) * completion_per_1k.micros;
    return Money{div1000_half_even(n)};
}

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("EVP_Digest(sha256) failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
}

std::string format_iso8601(TimePoint tp) {
    const auto ms = to_epoch_ms(tp);
    std::time_t secs = static_cast<std::time_t>(ms / 1000);
    int millis = static_cast<int>(ms % 1000);
    if (millis < 0) {
        millis += 1000;
        --secs;
    }
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, millis);
    return buf;
}

TimePoint parse_iso8601(std::string_view text) {
    int year = 0, mon = 0, day = 0, hour = 0, min = 0, sec = 0;
    int consumed = 0;
    const std::string s(text);
    if (std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &year, &mon, &day, &hour, &min, &sec,
                    &consumed) != 6 ||
        consumed != 19) {
        throw Error(ErrorCode::validation, "invalid UTC timestamp '" + s + "'");
    }
    std::size_t pos = 19;
    int millis = 0;
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        int digits = 0;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
            if (digits < 3) millis = millis * 10 + (s[pos] - '0');
            ++digits;
            ++pos;
        }
        if (digits == 0) throw Error(ErrorCode::validation, "invalid UTC timestamp '" + s + "'");
        for (int d = digits; d < 3; ++d) millis *= 10;
    }
    if (pos + 1 != s.size() || s[pos] != 'Z' || mon < 1 || mon > 12 || day < 1 || day > 31 ||
        hour > 23 || min > 59 || sec > 60) {
        throw Error(ErrorCode::validation, "invalid UTC timestamp '" + s + "'");
    }
    std::tm tm{};
    tm.tm_year = year - 1900;
    tm.tm_mon = mon - 1;
    tm.tm_mday = day;
    tm.tm_hour = hour;
    tm.tm_min = min;
    tm.tm_sec = sec;
    const std::time_t secs = timegm(&tm);
    return from_epoch_ms(static_cast<std::int64_t>(secs) * 1000 + millis);
}

std::int64_t to_epoch_ms(TimePoint tp) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(tp.time_since_epoch()).count();
}

TimePoint from_epoch_ms(std::int64_t ms) {
    return TimePoint(std::chrono::duration_cast<Clock::duration>(std::chrono::milliseconds(ms)));
}

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string utf8_truncate(std::string_view s, std::size_t max_bytes) {
    if (s.size() <= max_bytes) return std::string(s);
    std::size_t n = max_bytes;
    while (n > 0 && (static_cast<unsigned char>(s[n]) & 0xC0) == 0x80) --n;
    return std::string(s.substr(0, n));
}

}  // namespace ragdesk
