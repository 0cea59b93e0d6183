#pragma once

#include <map>
#include <string>
#include <string_view>

namespace ragdesk::rag {

/// Named prompt templates with {system}, {history}, {context} and {question}
/// placeholders. Ships with ANSWER, REPHRASE, DECOMPOSE and AGGREGATE.
class TemplateStore {
public:
    /// Built-in defaults (identical to the files under data/templates).
    static TemplateStore defaults();
    /// Defaults overridden by every `<ID>.txt` in `dir`; `SYSTEM.txt` sets the
    /// system text.
    static TemplateStore load_dir(const std::string& dir);

    void set(const std::string& id, std::string text) { templates_[id] = std::move(text); }
    void set_system(std::string text) { system_ = std::move(text); }

    [[nodiscard]] bool contains(const std::string& id) const { return templates_.count(id) != 0; }
    /// Throws Error(unknown_template).
    [[nodiscard]] const std::string& get(const std::string& id) const;
    [[nodiscard]] const std::string& system() const { return system_; }
    [[nodiscard]] const std::map<std::string, std::string>& all() const { return templates_; }

    /// Substitutes the four placeholders in a single left-to-right pass, so
    /// placeholder-like text inside substituted values is left untouched.
    [[nodiscard]] std::string render(const std::string& id, std::string_view history,
                                     std::string_view context, std::string_view question) const;

private:
    std::map<std::string, std::string> templates_;
    std::string system_;
};

std::string_view default_template(std::string_view id);
std::string_view default_system_text();

}  // namespace ragdesk::rag
