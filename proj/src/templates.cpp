#include "ragdesk/templates.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ragdesk/common.hpp"

namespace ragdesk::rag {

namespace {

constexpr std::string_view kSystem =
    "You are an enterprise assistant. Answer only from the numbered context passages and cite "
    "the passages you use as [n].";

constexpr std::string_view kAnswer =
    "{system}\n"
    "\n"
    "Conversation so far:\n"
    "{history}\n"
    "\n"
    "Context:\n"
    "{context}\n"
    "\n"
    "Question: {question}\n";

constexpr std::string_view kRephrase =
    "Rewrite the final user question as a standalone search query. Reply with the query only.\n"
    "\n"
    "Conversation so far:\n"
    "{history}\n"
    "\n"
    "Question: {question}\n";

constexpr std::string_view kDecompose =
    "Decide whether the question needs several independent lookups. If it does, reply with one "
    "line per sub-question, each line starting with the tag SUBQ and a colon. Otherwise reply "
    "SIMPLE.\n"
    "\n"
    "Question: {question}\n";

constexpr std::string_view kAggregate =
    "{system}\n"
    "\n"
    "Combine the numbered sub-answers into one answer to the question.\n"
    "\n"
    "Sub-answers:\n"
    "{context}\n"
    "\n"
    "Question: {question}\n";

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::string_view default_template(std::string_view id) {
    if (id == "ANSWER") return kAnswer;
    if (id == "REPHRASE") return kRephrase;
    if (id == "DECOMPOSE") return kDecompose;
    if (id == "AGGREGATE") return kAggregate;
    return {};
}

std::string_view default_system_text() { return kSystem; }

TemplateStore TemplateStore::defaults() {
    TemplateStore s;
    for (const char* id : {"ANSWER", "REPHRASE", "DECOMPOSE", "AGGREGATE"}) {
        s.templates_[id] = std::string(default_template(id));
    }
    s.system_ = std::string(kSystem);
    return s;
}

TemplateStore TemplateStore::load_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw Error(ErrorCode::not_found, "template directory '" + dir + "' not found");
    TemplateStore s = defaults();
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
        const std::string id = entry.path().stem().string();
        std::string text = read_file(entry.path());
        if (id == "SYSTEM") {
            while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
            s.system_ = std::move(text);
        } else {
            s.templates_[id] = std::move(text);
        }
    }
    return s;
}

const std::string& TemplateStore::get(const std::string& id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw Error(ErrorCode::unknown_template, "unknown prompt template '" + id + "'");
    return it->second;
}

std::string TemplateStore::render(const std::string& id, std::string_view history,
                                  std::string_view context, std::string_view question) const {
    const std::string& tpl = get(id);
    std::string out;
    out.reserve(tpl.size() + history.size() + context.size() + question.size() + system_.size());
    std::size_t i = 0;
    while (i < tpl.size()) {
        if (tpl[i] == '{') {
            const auto close = tpl.find('}', i);
            if (close != std::string::npos) {
                const std::string_view name(tpl.data() + i + 1, close - i - 1);
                const std::string_view* value = nullptr;
                const std::string_view system = system_;
                if (name == "system") value = &system;
                else if (name == "history") value = &history;
                else if (name == "context") value = &context;
                else if (name == "question") value = &question;
                if (value) {
                    out.append(*value);
                    i = close + 1;
                    continue;
                }
            }
        }
        out.push_back(tpl[i++]);
    }
    return out;
}

}  // namespace ragdesk::rag
