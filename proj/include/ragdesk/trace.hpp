#pragma once

#include <chrono>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragdesk/common.hpp"

namespace ragdesk::ragops {

struct StageRecord {
    std::string stage_name;
    TimePoint started_at;
    std::chrono::microseconds duration{0};
    std::string input_digest;   // SHA-256 of the stage input
    std::string output_digest;  // SHA-256 of the stage output
    nlohmann::json detail = nlohmann::json::object();
};

/// Ordered per-stage execution record of one request.
struct Trace {
    std::string trace_id;
    std::string request_id;
    std::string user_id;  // principal the request ran as
    std::vector<StageRecord> stages;

    [[nodiscard]] std::vector<std::string> stage_names() const;
    [[nodiscard]] const StageRecord* find_stage(const std::string& name) const;
};

nlohmann::json to_json(const StageRecord& s);
nlohmann::json to_json(const Trace& t);
Trace trace_from_json(const nlohmann::json& j);

/// Trace JSON with timestamps, durations and ids removed; equal for two runs
/// that executed identically.
nlohmann::json stable_view(const Trace& t);

/// Durable append-only trace store (JSONL when a path is given).
class TraceStore {
public:
    TraceStore() = default;
    /// Opens (and replays) the JSONL file at `path`.
    explicit TraceStore(const std::string& path);

    TraceStore(const TraceStore&) = delete;
    TraceStore& operator=(const TraceStore&) = delete;

    /// Returns a fresh, store-unique trace id.
    std::string next_id();

    /// Throws Error(validation) on an empty or duplicate trace id.
    void store(const Trace& trace);
    /// Throws Error(not_found).
    [[nodiscard]] Trace get(const std::string& trace_id) const;
    [[nodiscard]] bool contains(const std::string& trace_id) const;
    [[nodiscard]] std::vector<Trace> list_by_request(const std::string& request_id) const;
    [[nodiscard]] std::size_t size() const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, Trace> traces_;
    std::multimap<std::string, std::string> by_request_;
    std::uint64_t counter_ = 0;
    std::ofstream out_;
};

}  // namespace ragdesk::ragops
