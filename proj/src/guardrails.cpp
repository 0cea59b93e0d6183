#include "ragdesk/guardrails.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace ragdesk::guard {

using nlohmann::json;

namespace {

constexpr const char* kEmailPattern =
    R"([A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,})";
constexpr const char* kSsnPattern = R"(\d{3}-\d{2}-\d{4})";
constexpr int kMaxPasses = 8;

std::string replacement_for(const RedactionRule& r) { return "[REDACTED:" + r.label + "]"; }

bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

// Replaces maximal digit runs (single spaces or dashes allowed between digits)
// of 13-19 digits that pass the Luhn check.
int redact_cards(std::string& text, const std::string& replacement) {
    std::string out;
    out.reserve(text.size());
    int count = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        if (!is_digit(text[i])) {
            out.push_back(text[i++]);
            continue;
        }
        std::size_t j = i;
        int digits = 0;
        while (j < text.size()) {
            if (is_digit(text[j])) {
                ++digits;
                ++j;
            } else if ((text[j] == ' ' || text[j] == '-') && j + 1 < text.size() && is_digit(text[j + 1])) {
                ++j;
            } else {
                break;
            }
        }
        const std::string_view run(text.data() + i, j - i);
        if (digits >= 13 && digits <= 19 && luhn_valid(run)) {
            out.append(replacement);
            ++count;
        } else {
            out.append(run);
        }
        i = j;
    }
    if (count > 0) text = std::move(out);
    return count;
}

int redact_regex(std::string& text, const std::regex& re, const std::string& replacement) {
    int count = 0;
    std::string out;
    auto begin = std::sregex_iterator(text.begin(), text.end(), re);
    auto end = std::sregex_iterator();
    std::size_t last = 0;
    for (auto it = begin; it != end; ++it) {
        const auto& m = *it;
        if (m.length(0) == 0) continue;
        out.append(text, last, static_cast<std::size_t>(m.position(0)) - last);
        out.append(replacement);
        last = static_cast<std::size_t>(m.position(0) + m.length(0));
        ++count;
    }
    if (count > 0) {
        out.append(text, last, std::string::npos);
        text = std::move(out);
    }
    return count;
}

}  // namespace

std::string_view to_string(RedactionKind k) {
    switch (k) {
        case RedactionKind::email: return "email";
        case RedactionKind::ssn_like: return "ssn_like";
        case RedactionKind::credit_card_luhn: return "credit_card_luhn";
        case RedactionKind::custom_regex: return "custom_regex";
    }
    return "custom_regex";
}

RedactionKind parse_redaction_kind(std::string_view text) {
    if (text == "email") return RedactionKind::email;
    if (text == "ssn_like") return RedactionKind::ssn_like;
    if (text == "credit_card_luhn") return RedactionKind::credit_card_luhn;
    if (text == "custom_regex") return RedactionKind::custom_regex;
    throw Error(ErrorCode::config_invalid, "unknown redaction kind '" + std::string(text) + "'");
}

bool luhn_valid(std::string_view digits) {
    int sum = 0;
    int n = 0;
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
        if (!is_digit(*it)) continue;
        int d = *it - '0';
        if (n % 2 == 1) {
            d *= 2;
            if (d > 9) d -= 9;
        }
        sum += d;
        ++n;
    }
    return n > 0 && sum % 10 == 0;
}

GuardrailPolicy GuardrailPolicy::compile(std::vector<BlockRule> blocks,
                                         std::vector<RedactionRule> redactions,
                                         std::string refusal_message) {
    if (trim(refusal_message).empty()) throw Error(ErrorCode::config_invalid, "refusal_message must be non-empty");
    GuardrailPolicy p;
    auto block_regex = std::make_shared<std::vector<std::regex>>();
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (blocks[i].reason.empty()) {
            throw Error(ErrorCode::config_invalid, "input_block_patterns[" + std::to_string(i) + "]: reason must be non-empty");
        }
        try {
            block_regex->emplace_back(blocks[i].pattern, std::regex::ECMAScript | std::regex::icase);
        } catch (const std::regex_error& e) {
            throw Error(ErrorCode::config_invalid, "input_block_patterns[" + std::to_string(i) +
                                                       "]: pattern does not compile: " + e.what());
        }
    }
    auto redaction_regex = std::make_shared<std::vector<std::regex>>();
    std::set<std::string> names;
    for (std::size_t i = 0; i < redactions.size(); ++i) {
        auto& r = redactions[i];
        const std::string where = "redaction_rules[" + std::to_string(i) + "]: ";
        if (r.label.empty() || r.label.find(']') != std::string::npos) {
            throw Error(ErrorCode::config_invalid, where + "label must be non-empty and must not contain ']'");
        }
        if (r.name.empty() || !names.insert(r.name).second) {
            throw Error(ErrorCode::config_invalid, where + "name must be non-empty and unique");
        }
        std::string pattern;
        switch (r.kind) {
            case RedactionKind::email: pattern = kEmailPattern; break;
            case RedactionKind::ssn_like: pattern = kSsnPattern; break;
            case RedactionKind::credit_card_luhn: pattern = "$^"; break;  // handled by scanner
            case RedactionKind::custom_regex: pattern = r.pattern; break;
        }
        try {
            redaction_regex->emplace_back(pattern, std::regex::ECMAScript);
        } catch (const std::regex_error& e) {
            throw Error(ErrorCode::config_invalid, where + "pattern does not compile: " + e.what());
        }
        if (r.kind == RedactionKind::custom_regex) {
            if (r.pattern.empty()) throw Error(ErrorCode::config_invalid, where + "custom_regex needs a pattern");
            if (std::regex_search(replacement_for(r), redaction_regex->back())) {
                throw Error(ErrorCode::config_invalid, where + "pattern matches its own replacement");
            }
        }
    }
    p.blocks_ = std::move(blocks);
    p.redactions_ = std::move(redactions);
    p.refusal_ = std::move(refusal_message);
    p.block_regex_ = std::move(block_regex);
    p.redaction_regex_ = std::move(redaction_regex);
    return p;
}

GuardrailPolicy GuardrailPolicy::from_json(const json& j) {
    std::vector<BlockRule> blocks;
    for (const auto& b : j.value("input_block_patterns", json::array())) {
        blocks.push_back(BlockRule{b.at("pattern").get<std::string>(), b.at("reason").get<std::string>()});
    }
    std::vector<RedactionRule> redactions;
    for (const auto& r : j.value("redaction_rules", json::array())) {
        RedactionRule rule;
        rule.name = r.at("name").get<std::string>();
        rule.kind = parse_redaction_kind(r.at("kind").get<std::string>());
        rule.pattern = r.value("pattern", "");
        rule.label = r.at("label").get<std::string>();
        redactions.push_back(std::move(rule));
    }
    return compile(std::move(blocks), std::move(redactions),
                   j.value("refusal_message", "I can't help with that request."));
}

GuardrailPolicy GuardrailPolicy::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::not_found, "cannot open guardrail policy '" + path + "'");
    try {
        return from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::config_invalid, path + ": " + e.what());
    } catch (const Error& e) {
        throw Error(e.code(), path + ": " + e.what());
    }
}

GuardrailPolicy GuardrailPolicy::defaults() {
    return compile(
        {
            {R"(ignore (all )?(previous|prior) instructions)", "prompt_injection"},
            {R"(disregard (the|your) (system|previous) prompt)", "prompt_injection"},
            {R"(reveal (the|your) system prompt)", "prompt_injection"},
        },
        {
            {"email", RedactionKind::email, "", "EMAIL"},
            {"ssn", RedactionKind::ssn_like, "", "SSN"},
            {"card", RedactionKind::credit_card_luhn, "", "CARD"},
        },
        "I can't help with that request.");
}

json GuardrailPolicy::to_json() const {
    json blocks = json::array();
    for (const auto& b : blocks_) blocks.push_back({{"pattern", b.pattern}, {"reason", b.reason}});
    json reds = json::array();
    for (const auto& r : redactions_) {
        json jr{{"name", r.name}, {"kind", to_string(r.kind)}, {"label", r.label}};
        if (r.kind == RedactionKind::custom_regex) jr["pattern"] = r.pattern;
        reds.push_back(std::move(jr));
    }
    return json{{"input_block_patterns", blocks}, {"redaction_rules", reds}, {"refusal_message", refusal_}};
}

InputVerdict check_input(std::string_view query, const GuardrailPolicy& policy) {
    const auto& rules = policy.block_rules();
    const std::string q(query);
    for (std::size_t i = 0; i < rules.size(); ++i) {
        if (std::regex_search(q, policy.block_pattern(i))) return InputVerdict::block(rules[i].reason);
    }
    return InputVerdict::allow();
}

RedactionResult redact_output(std::string_view text, const GuardrailPolicy& policy) {
    RedactionResult result;
    result.text.assign(text);
    const auto& rules = policy.redaction_rules();
    std::vector<int> counts(rules.size(), 0);
    for (int pass = 0; pass < kMaxPasses; ++pass) {
        bool changed = false;
        for (std::size_t i = 0; i < rules.size(); ++i) {
            const std::string replacement = replacement_for(rules[i]);
            const int n = rules[i].kind == RedactionKind::credit_card_luhn
                              ? redact_cards(result.text, replacement)
                              : redact_regex(result.text, policy.redaction_pattern(i), replacement);
            counts[i] += n;
            changed = changed || n > 0;
        }
        if (!changed) break;
    }
    for (std::size_t i = 0; i < rules.size(); ++i) {
        if (counts[i] > 0) result.redactions.push_back({rules[i].name, counts[i]});
    }
    return result;
}

std::vector<index::ScoredHit> filter_sensitive_hits(std::vector<index::ScoredHit> hits,
                                                    Sensitivity clearance) {
    std::erase_if(hits, [&](const index::ScoredHit& h) { return !h.chunk || h.chunk->sensitivity > clearance; });
    return hits;
}

}  // namespace ragdesk::guard
