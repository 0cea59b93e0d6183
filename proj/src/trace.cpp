#include "ragdesk/trace.hpp"

#include <cstdio>

namespace ragdesk::ragops {

using nlohmann::json;

std::vector<std::string> Trace::stage_names() const {
    std::vector<std::string> names;
    names.reserve(stages.size());
    for (const auto& s : stages) names.push_back(s.stage_name);
    return names;
}

const StageRecord* Trace::find_stage(const std::string& name) const {
    for (const auto& s : stages) {
        if (s.stage_name == name) return &s;
    }
    return nullptr;
}

json to_json(const StageRecord& s) {
    return json{{"stage_name", s.stage_name},
                {"started_at", format_iso8601(s.started_at)},
                {"duration_us", s.duration.count()},
                {"input_digest", s.input_digest},
                {"output_digest", s.output_digest},
                {"detail", s.detail}};
}

json to_json(const Trace& t) {
    json stages = json::array();
    for (const auto& s : t.stages) stages.push_back(to_json(s));
    return json{{"trace_id", t.trace_id}, {"request_id", t.request_id}, {"user_id", t.user_id},
                {"stages", stages}};
}

Trace trace_from_json(const json& j) {
    Trace t;
    t.trace_id = j.at("trace_id").get<std::string>();
    t.request_id = j.at("request_id").get<std::string>();
    t.user_id = j.value("user_id", "");
    for (const auto& js : j.at("stages")) {
        StageRecord s;
        s.stage_name = js.at("stage_name").get<std::string>();
        s.started_at = parse_iso8601(js.at("started_at").get<std::string>());
        s.duration = std::chrono::microseconds(js.at("duration_us").get<std::int64_t>());
        s.input_digest = js.at("input_digest").get<std::string>();
        s.output_digest = js.at("output_digest").get<std::string>();
        s.detail = js.at("detail");
        t.stages.push_back(std::move(s));
    }
    return t;
}

namespace {

void strip_volatile(json& j) {
    if (j.is_object()) {
        for (const char* key : {"started_at", "duration_us", "latency_us", "provider_latency_us",
                                "trace_id", "request_id", "child_trace_ids", "audit_id"}) {
            j.erase(key);
        }
        for (auto& [k, v] : j.items()) strip_volatile(v);
    } else if (j.is_array()) {
        for (auto& v : j) strip_volatile(v);
    }
}

}  // namespace

json stable_view(const Trace& t) {
    json j = to_json(t);
    strip_volatile(j);
    return j;
}

TraceStore::TraceStore(const std::string& path) {
    {
        std::ifstream in(path);
        std::string line;
        int lineno = 0;
        while (in && std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                Trace t = trace_from_json(json::parse(line));
                by_request_.emplace(t.request_id, t.trace_id);
                traces_[t.trace_id] = std::move(t);
            } catch (const std::exception& e) {
                throw Error(ErrorCode::validation, path + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
    }
    counter_ = traces_.size();
    out_.open(path, std::ios::app);
    if (!out_) throw Error(ErrorCode::validation, "cannot open trace store '" + path + "'");
}

std::string TraceStore::next_id() {
    std::lock_guard lock(mutex_);
    for (;;) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "trace-%06llu", static_cast<unsigned long long>(++counter_));
        if (traces_.count(buf) == 0) return buf;
    }
}

void TraceStore::store(const Trace& trace) {
    if (trace.trace_id.empty()) throw Error(ErrorCode::validation, "trace id must be non-empty");
    std::lock_guard lock(mutex_);
    if (traces_.count(trace.trace_id) != 0) {
        throw Error(ErrorCode::validation, "trace '" + trace.trace_id + "' already stored");
    }
    if (out_.is_open()) {
        out_ << to_json(trace).dump() << '\n';
        out_.flush();
    }
    by_request_.emplace(trace.request_id, trace.trace_id);
    traces_.emplace(trace.trace_id, trace);
}

Trace TraceStore::get(const std::string& trace_id) const {
    std::lock_guard lock(mutex_);
    auto it = traces_.find(trace_id);
    if (it == traces_.end()) throw Error(ErrorCode::not_found, "trace '" + trace_id + "' not found");
    return it->second;
}

bool TraceStore::contains(const std::string& trace_id) const {
    std::lock_guard lock(mutex_);
    return traces_.count(trace_id) != 0;
}

std::vector<Trace> TraceStore::list_by_request(const std::string& request_id) const {
    std::lock_guard lock(mutex_);
    std::vector<Trace> out;
    auto [b, e] = by_request_.equal_range(request_id);
    for (auto it = b; it != e; ++it) out.push_back(traces_.at(it->second));
    return out;
}

std::size_t TraceStore::size() const {
    std::lock_guard lock(mutex_);
    return traces_.size();
}

}  // namespace ragdesk::ragops
