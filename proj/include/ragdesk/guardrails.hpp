#pragma once

#include <memory>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragdesk/common.hpp"
#include "ragdesk/index.hpp"

namespace ragdesk::guard {

struct BlockRule {
    std::string pattern;
    std::string reason;
};

enum class RedactionKind { email, ssn_like, credit_card_luhn, custom_regex };

std::string_view to_string(RedactionKind k);
RedactionKind parse_redaction_kind(std::string_view text);

struct RedactionRule {
    std::string name;
    RedactionKind kind = RedactionKind::custom_regex;
    std::string pattern;  // custom_regex only
    std::string label;    // replacement is "[REDACTED:<label>]"
};

/// Input block rules, output redaction rules and the refusal text.
///
/// Construct through `GuardrailPolicy::compile`, which validates every rule;
/// a compiled policy is immutable and safe to share across threads.
class GuardrailPolicy {
public:
    static GuardrailPolicy compile(std::vector<BlockRule> blocks, std::vector<RedactionRule> redactions,
                                   std::string refusal_message);
    static GuardrailPolicy from_json(const nlohmann::json& j);
    static GuardrailPolicy load_file(const std::string& path);
    /// Prompt-injection block rules plus email, SSN and card redaction.
    static GuardrailPolicy defaults();

    [[nodiscard]] nlohmann::json to_json() const;

    [[nodiscard]] const std::vector<BlockRule>& block_rules() const { return blocks_; }
    [[nodiscard]] const std::vector<RedactionRule>& redaction_rules() const { return redactions_; }
    [[nodiscard]] const std::string& refusal_message() const { return refusal_; }
    [[nodiscard]] const std::regex& block_pattern(std::size_t i) const { return (*block_regex_)[i]; }
    [[nodiscard]] const std::regex& redaction_pattern(std::size_t i) const { return (*redaction_regex_)[i]; }

private:
    GuardrailPolicy() = default;

    std::vector<BlockRule> blocks_;
    std::vector<RedactionRule> redactions_;
    std::string refusal_;
    std::shared_ptr<const std::vector<std::regex>> block_regex_;
    std::shared_ptr<const std::vector<std::regex>> redaction_regex_;  // parallel to redactions_
};

struct InputVerdict {
    bool allowed = true;
    std::string reason;  // set when blocked

    static InputVerdict allow() { return {}; }
    static InputVerdict block(std::string why) { return {false, std::move(why)}; }
};

/// First matching block rule (case-insensitive, policy order) wins.
InputVerdict check_input(std::string_view query, const GuardrailPolicy& policy);

struct RedactionCount {
    std::string rule;
    int count = 0;
};

struct RedactionResult {
    std::string text;
    std::vector<RedactionCount> redactions;  // only rules that fired
};

/// Applies every redaction rule until no rule matches. Idempotent.
RedactionResult redact_output(std::string_view text, const GuardrailPolicy& policy);

/// Mod-10 checksum over the decimal digits of `digits` (non-digits ignored).
bool luhn_valid(std::string_view digits);

/// Removes hits whose chunk sensitivity exceeds `clearance`.
std::vector<index::ScoredHit> filter_sensitive_hits(std::vector<index::ScoredHit> hits,
                                                    Sensitivity clearance);

}  // namespace ragdesk::guard
