#include "ragdesk/engine.hpp"

#include <algorithm>
#include <filesystem>

namespace ragdesk::engine {

using nlohmann::json;
namespace fs = std::filesystem;

json ChatOutput::to_json() const {
    json cites = json::array();
    for (const auto& c : answer.citations) cites.push_back(rag::to_json(c));
    json j{{"answer", answer.text},
           {"citations", cites},
           {"blocked", answer.blocked},
           {"block_reason", answer.block_reason ? json(*answer.block_reason) : json(nullptr)},
           {"trace_id", answer.trace_id},
           {"bot_id", bot_id}};
    if (answer.error) j["error_code"] = *answer.error;
    return j;
}

// ---------------------------------------------------------------------------
// Feedback

json Feedback::to_json() const {
    return json{{"trace_id", trace_id},
                {"rating", rating == Rating::up ? "up" : "down"},
                {"comment", comment},
                {"user_id", user_id},
                {"timestamp", format_iso8601(timestamp)}};
}

Feedback Feedback::from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::bad_request, "feedback must be a JSON object");
    Feedback f;
    try {
        f.trace_id = j.at("trace_id").get<std::string>();
        const auto rating = j.at("rating").get<std::string>();
        if (rating == "up") f.rating = Rating::up;
        else if (rating == "down") f.rating = Rating::down;
        else throw Error(ErrorCode::bad_request, "rating must be 'up' or 'down'");
        if (j.contains("comment") && !j.at("comment").is_null()) f.comment = j.at("comment").get<std::string>();
        f.user_id = j.value("user_id", "");
        f.timestamp = j.contains("timestamp") ? parse_iso8601(j.at("timestamp").get<std::string>()) : Clock::now();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::bad_request, std::string("feedback: ") + e.what());
    }
    if (f.trace_id.empty()) throw Error(ErrorCode::bad_request, "trace_id must be non-empty");
    return f;
}

FeedbackStore::FeedbackStore(const std::string& path) {
    {
        std::ifstream in(path);
        std::string line;
        while (in && std::getline(in, line)) {
            if (trim(line).empty()) continue;
            auto f = Feedback::from_json(json::parse(line));
            votes_[f.trace_id] = std::move(f);
        }
    }
    out_.open(path, std::ios::app);
    if (!out_) throw Error(ErrorCode::validation, "cannot open feedback log '" + path + "'");
}

bool FeedbackStore::record(Feedback f) {
    if (f.comment.size() > kMaxFeedbackComment) f.comment = utf8_truncate(f.comment, kMaxFeedbackComment);
    std::lock_guard lock(mutex_);
    if (out_.is_open()) {
        out_ << f.to_json().dump() << '\n';
        out_.flush();
    }
    const bool replaced = votes_.count(f.trace_id) != 0;
    votes_[f.trace_id] = std::move(f);
    return replaced;
}

std::optional<Feedback> FeedbackStore::get(const std::string& trace_id) const {
    std::lock_guard lock(mutex_);
    auto it = votes_.find(trace_id);
    if (it == votes_.end()) return std::nullopt;
    return it->second;
}

std::size_t FeedbackStore::size() const {
    std::lock_guard lock(mutex_);
    return votes_.size();
}

// ---------------------------------------------------------------------------
// Engine

namespace {

guard::GuardrailPolicy load_policy(const config::AppConfig& cfg) {
    return cfg.guardrail_policy ? guard::GuardrailPolicy::load_file(*cfg.guardrail_policy)
                                : guard::GuardrailPolicy::defaults();
}

rag::TemplateStore load_templates(const config::AppConfig& cfg) {
    return cfg.templates_dir ? rag::TemplateStore::load_dir(*cfg.templates_dir) : rag::TemplateStore::defaults();
}

}  // namespace

Engine::Engine(config::AppConfig cfg, EngineOptions options)
    : cfg_(std::move(cfg)), options_(std::move(options)), policy_(load_policy(cfg_)), templates_(load_templates(cfg_)) {
    cfg_.check_files();
    fs::create_directories(cfg_.data_dir);

    const std::string audit_path = (fs::path(cfg_.data_dir) / "audit.jsonl").string();
    gateway::GatewayOptions gopts;
    gopts.audit_log_path = audit_path;
    gopts.clock = options_.clock;
    gateway_ = std::make_unique<gateway::Gateway>(gopts);
    gateway_->replay_audit_log(audit_path);
    for (const auto& p : cfg_.providers) gateway_->register_provider(p);

    traces_ = std::make_unique<ragops::TraceStore>((fs::path(cfg_.data_dir) / "traces.jsonl").string());
    feedback_ = std::make_unique<FeedbackStore>((fs::path(cfg_.data_dir) / "feedback.jsonl").string());

    for (const auto& spec : cfg_.corpora) {
        Corpus c;
        c.spec = spec;
        c.chunking = spec.chunking.value_or(cfg_.default_pipeline.chunking);
        c.index = std::make_unique<index::HybridIndex>();
        c.pipeline = std::make_unique<rag::Pipeline>(*c.index, *gateway_, policy_, templates_, *traces_);
        corpora_.emplace(spec.corpus_id, std::move(c));
    }

    auto bots = agent::load_bot_registry(cfg_.bot_registry, cfg_.default_pipeline);
    std::set<std::string> subscriptions;
    for (const auto& b : bots) {
        if (corpora_.count(b.corpus_id) == 0) {
            throw Error(ErrorCode::config_invalid, "bot_registry: bot '" + b.bot_id + "' uses unknown corpus '" + b.corpus_id + "'");
        }
        if (!gateway_->has_model(b.pipeline_cfg.model_id)) {
            throw Error(ErrorCode::config_invalid, "bot_registry: bot '" + b.bot_id + "' uses unknown model '" +
                                                       b.pipeline_cfg.model_id + "'");
        }
        subscriptions.insert(b.pipeline_cfg.subscription_id);
    }
    subscriptions.insert(cfg_.default_pipeline.subscription_id);
    for (const auto& s : subscriptions) gateway_->ensure_subscription(s);
    for (const auto& s : cfg_.subscriptions) {
        gateway_->ensure_subscription(s.subscription_id);
        if (s.quota) {
            // The configured quota is the lifetime allowance; replayed spend counts against it.
            Money remaining = *s.quota - gateway_->ledger_balance(s.subscription_id);
            if (remaining.micros < 0) remaining = Money{};
            gateway_->set_quota(s.subscription_id, remaining);
        }
        if (s.rate_limit_per_minute) gateway_->set_rate_limit(s.subscription_id, s.rate_limit_per_minute);
    }
    std::string default_bot = cfg_.default_bot_id.empty() ? bots.front().bot_id : cfg_.default_bot_id;
    orchestrator_ = std::make_unique<agent::Orchestrator>(
        std::move(bots), std::move(default_bot),
        [this](const std::string& corpus_id) -> const rag::Pipeline& { return *corpus(corpus_id).pipeline; });

    ingest_configured();
}

std::unique_ptr<Engine> Engine::from_file(const std::string& path, EngineOptions options) {
    return std::make_unique<Engine>(config::AppConfig::load_file(path), std::move(options));
}

Engine::Corpus& Engine::corpus(const std::string& corpus_id) {
    auto it = corpora_.find(corpus_id);
    if (it == corpora_.end()) throw Error(ErrorCode::not_found, "unknown corpus '" + corpus_id + "'");
    return it->second;
}

const Engine::Corpus& Engine::corpus(const std::string& corpus_id) const {
    auto it = corpora_.find(corpus_id);
    if (it == corpora_.end()) throw Error(ErrorCode::not_found, "unknown corpus '" + corpus_id + "'");
    return it->second;
}

const index::HybridIndex& Engine::index(const std::string& corpus_id) const { return *corpus(corpus_id).index; }

std::vector<std::string> Engine::corpus_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, c] : corpora_) ids.push_back(id);
    return ids;
}

std::vector<ingest::Document> Engine::documents(const std::string& corpus_id) const {
    const auto& c = corpus(corpus_id);
    std::lock_guard lock(docs_mutex_);
    return c.documents;
}

IngestSummary Engine::ingest(const std::string& corpus_id, const std::vector<ingest::Document>& docs) {
    auto& c = corpus(corpus_id);
    std::vector<ingest::Chunk> chunks;
    for (const auto& d : docs) {
        auto cs = ingest::chunk_document(d, c.chunking);
        chunks.insert(chunks.end(), std::make_move_iterator(cs.begin()), std::make_move_iterator(cs.end()));
    }
    // upsert replaces documents that have chunks; empty ones are dropped here.
    std::set<std::string> with_chunks;
    for (const auto& ch : chunks) with_chunks.insert(ch.doc_id);
    for (const auto& d : docs) {
        if (!with_chunks.count(d.doc_id)) c.index->delete_document(d.doc_id);
    }
    IngestSummary s;
    s.documents = docs.size();
    s.chunks = c.index->upsert_chunks(chunks);
    std::lock_guard lock(docs_mutex_);
    for (const auto& d : docs) {
        auto it = std::find_if(c.documents.begin(), c.documents.end(),
                               [&](const ingest::Document& x) { return x.doc_id == d.doc_id; });
        if (it != c.documents.end()) *it = d;
        else c.documents.push_back(d);
    }
    return s;
}

IngestSummary Engine::ingest_configured() {
    IngestSummary total;
    for (auto& [id, c] : corpora_) {
        const auto s = ingest(id, ingest::load_manifest_file(c.spec.path));
        total.documents += s.documents;
        total.chunks += s.chunks;
    }
    return total;
}

std::string Engine::snapshot_dir(const std::string& corpus_id) const {
    return (fs::path(cfg_.data_dir) / "index" / corpus_id).string();
}

void Engine::save_snapshots() const {
    for (const auto& [id, c] : corpora_) {
        const auto dir = snapshot_dir(id);
        fs::create_directories(dir);
        c.index->save(dir);
    }
}

ChatOutput Engine::chat(const ChatInput& input) {
    if (trim(input.message).empty()) throw Error(ErrorCode::bad_request, "message must be non-empty");
    rag::QueryContext ctx;
    ctx.principal = input.principal;
    ctx.history = input.history;
    ctx.request_id = input.request_id.empty() ? "req-" + std::to_string(++request_counter_) : input.request_id;
    const auto& orch = *orchestrator_;
    agent::RouteDecision routing;
    if (input.bot_id && !input.bot_id->empty()) {
        routing.bot_id = *input.bot_id;
    } else {
        routing = agent::route_detailed(input.message, orch.bots(), orch.default_bot_id());
    }
    const auto& bot = orch.bot(routing.bot_id);
    ctx.bot_id = bot.bot_id;
    auto res = orch.orchestrate(ctx, input.message, bot, routing);
    return ChatOutput{std::move(res.answer), bot.bot_id};
}

ragops::EvalReport Engine::evaluate(const std::vector<ragops::EvalCase>& suite,
                                    const std::optional<json>& pipeline_overrides,
                                    const std::optional<std::string>& corpus_id) {
    const auto& bot = orchestrator_->bot(orchestrator_->default_bot_id());
    const std::string cid = corpus_id.value_or(bot.corpus_id);
    rag::PipelineConfig base = bot.pipeline_cfg;
    base.chunking = corpus(cid).chunking;
    const auto cfg = pipeline_overrides ? rag::PipelineConfig::from_json(*pipeline_overrides, base) : base;
    ragops::TraceStore scratch;
    return ragops::evaluate(documents(cid), cfg, suite, ragops::EvalEnv{*gateway_, policy_, templates_, scratch});
}

ragops::GridResult Engine::grid_search(const ragops::GridSpec& grid, const std::vector<ragops::EvalCase>& suite,
                                       const std::optional<std::string>& corpus_id) {
    const auto& bot = orchestrator_->bot(orchestrator_->default_bot_id());
    const std::string cid = corpus_id.value_or(bot.corpus_id);
    rag::PipelineConfig base = bot.pipeline_cfg;
    base.chunking = corpus(cid).chunking;
    ragops::TraceStore scratch;
    return ragops::grid_search(documents(cid), base, grid, suite,
                               ragops::EvalEnv{*gateway_, policy_, templates_, scratch});
}

}  // namespace ragdesk::engine
