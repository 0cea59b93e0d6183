#pragma once

#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ragdesk {

enum class ErrorCode {
    unsupported_format,
    empty_acl,
    config_invalid,
    unknown_template,
    unknown_model,
    unknown_subscription,
    quota_exceeded,
    rate_limited,
    provider_timeout,
    provider_error,
    unauthorized,
    empty_suite,
    suite_mismatch,
    not_found,
    bad_request,
    validation,
};

/// Stable snake_case name used in HTTP error bodies and audit records.
std::string_view to_string(ErrorCode code);

/// Base exception for every recoverable failure raised by the engine.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Ordered sensitivity label; a principal may read labels <= its clearance.
enum class Sensitivity : int { public_ = 0, internal = 1, confidential = 2, restricted = 3 };

std::string_view to_string(Sensitivity s);
Sensitivity parse_sensitivity(std::string_view text);

/// Fixed-point currency amount with six fractional digits.
///
/// All ledger arithmetic happens in integer micro-units so sums never drift.
struct Money {
    std::int64_t micros = 0;

    static Money from_micros(std::int64_t m) { return Money{m}; }
    /// Parses "2", "2.5", "0.000001"; more than six fractional digits is an error.
    static Money parse(std::string_view text);

    [[nodiscard]] std::string to_string() const;
    [[nodiscard]] double to_double() const { return static_cast<double>(micros) / 1e6; }

    friend Money operator+(Money a, Money b) { return Money{a.micros + b.micros}; }
    friend Money operator-(Money a, Money b) { return Money{a.micros - b.micros}; }
    Money& operator+=(Money o) {
        micros += o.micros;
        return *this;
    }
    Money& operator-=(Money o) {
        micros -= o.micros;
        return *this;
    }
    friend auto operator<=>(const Money&, const Money&) = default;
};

/// (tokens / 1000) * price, rounded half-even to micro-units.
Money cost_for_tokens(std::int64_t tokens, Money price_per_1k);

/// Combined prompt + completion cost with a single rounding step.
Money request_cost(std::int64_t prompt_tokens, Money prompt_per_1k,
                   std::int64_t completion_tokens, Money completion_per_1k);

/// Lowercase hex SHA-256 of the bytes of `data`.
std::string sha256_hex(std::string_view data);

using Clock = std::chrono::system_clock;
using TimePoint = Clock::time_point;

/// "2024-05-01T12:00:00.123Z"
std::string format_iso8601(TimePoint tp);
/// Accepts "YYYY-MM-DDTHH:MM:SS[.fff]Z"; throws Error(validation) otherwise.
TimePoint parse_iso8601(std::string_view text);

std::int64_t to_epoch_ms(TimePoint tp);
TimePoint from_epoch_ms(std::int64_t ms);

std::string trim(std::string_view s);
/// At most `max_bytes` bytes, cut back to a code point boundary.
std::string utf8_truncate(std::string_view s, std::size_t max_bytes);

}  // namespace ragdesk
