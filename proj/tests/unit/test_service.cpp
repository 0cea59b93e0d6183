#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "ragdesk/api.hpp"
#include "ragdesk/cli.hpp"
#include "ragdesk/server.hpp"
#include "fixtures.hpp"

using namespace ragdesk;
using nlohmann::json;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::StartsWith;

namespace {

const std::string kDemo = std::string(RAGDESK_DATA_DIR) + "/demo/ragdesk.json";

std::unique_ptr<engine::Engine> demo_engine(const std::filesystem::path& dir) {
    auto cfg = config::AppConfig::load_file(kDemo);
    cfg.data_dir = dir.string();
    return std::make_unique<engine::Engine>(std::move(cfg));
}

api::ApiRequest post(const std::string& path, const json& body) {
    api::ApiRequest r;
    r.method = "POST";
    r.path = path;
    r.body = body.dump();
    return r;
}

api::ApiRequest get(const std::string& path, std::map<std::string, std::string> headers = {},
                    std::map<std::string, std::string> query = {}) {
    api::ApiRequest r;
    r.method = "GET";
    r.path = path;
    r.headers = std::move(headers);
    r.query = std::move(query);
    return r;
}

json employee(const std::string& id = "ann") {
    return {{"user_id", id}, {"groups", {"employees"}}, {"clearance", "internal"}};
}

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

void write(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("app config diagnostics", "[service]") {
    const auto base = json::parse(std::ifstream(kDemo));
    const std::string demo_dir = std::string(RAGDESK_DATA_DIR) + "/demo";
    CHECK_NOTHROW(config::AppConfig::from_json(base, demo_dir));

    auto bad = base;
    bad["corpora"][1].erase("path");
    CHECK_THROWS_WITH(config::AppConfig::from_json(bad, demo_dir), StartsWith("corpora[1].path"));
    bad = base;
    bad["default_pipeline"]["top_k"] = 0;
    CHECK_THROWS_WITH(config::AppConfig::from_json(bad, demo_dir), StartsWith("default_pipeline"));
    bad = base;
    bad["providers"][0]["kind"] = "carrier-pigeon";
    CHECK_THROWS_WITH(config::AppConfig::from_json(bad, demo_dir), StartsWith("providers[0]"));
    bad = base;
    bad["subscriptions"][0]["quota"] = "1.2345678";
    CHECK_THROWS_WITH(config::AppConfig::from_json(bad, demo_dir), StartsWith("subscriptions[0].quota"));
    bad = base;
    bad["colour"] = "blue";
    CHECK_THROWS_WITH(config::AppConfig::from_json(bad, demo_dir), StartsWith("colour"));
    bad = base;
    bad["listen"] = "localhost";
    CHECK_THROWS_WITH(config::AppConfig::from_json(bad, demo_dir), StartsWith("listen"));

    const auto dir = fixture::temp_dir("cfg");
    write(dir / "broken.json", "{\n  \"corpora\": [\n    oops\n  ]\n}\n");
    CHECK_THROWS_WITH(config::AppConfig::load_file((dir / "broken.json").string()), ContainsSubstring("broken.json:3:5"));
    CHECK(config::line_column("ab\ncd", 4) == std::pair<std::size_t, std::size_t>{2, 2});
    std::filesystem::remove_all(dir);
}

TEST_CASE("shipped templates equal the built-in defaults", "[service]") {
    const auto shipped = rag::TemplateStore::load_dir(std::string(RAGDESK_DATA_DIR) + "/templates");
    const auto builtin = rag::TemplateStore::defaults();
    CHECK(shipped.all() == builtin.all());
    CHECK(shipped.system() == builtin.system());
}

TEST_CASE("feedback store", "[service]") {
    const auto dir = fixture::temp_dir("fb");
    const auto path = (dir / "fb.jsonl").string();
    {
        engine::FeedbackStore store(path);
        engine::Feedback f;
        f.trace_id = "t1";
        f.comment = std::string(2100, 'x');
        CHECK_FALSE(store.record(f));
        CHECK(store.get("t1")->comment.size() == engine::kMaxFeedbackComment);
        f.rating = engine::Rating::down;
        CHECK(store.record(f));
        CHECK(store.size() == 1);
    }
    engine::FeedbackStore again(path);
    CHECK(again.get("t1")->rating == engine::Rating::down);
    CHECK_FALSE(again.get("t2").has_value());
    std::filesystem::remove_all(dir);
}

TEST_CASE("api over the demo engine", "[service]") {
    const auto dir = fixture::temp_dir("api");
    auto eng = demo_engine(dir);
    api::Api api(*eng);

    CHECK(api.handle(get("/v1/health")).status == 200);
    CHECK(api.handle(get("/v1/nowhere")).status == 404);
    CHECK(api.handle(get("/v1/chat")).status == 400);

    api::ApiRequest malformed = post("/v1/chat", {});
    malformed.body = "{not json";
    const auto bad = api.handle(malformed);
    CHECK(bad.status == 400);
    CHECK(bad.body.at("error_code") == "bad_request");
    CHECK(api.handle(post("/v1/chat", {{"message", "hi"}})).status == 400);

    const auto chat = api.handle(post("/v1/chat", {{"message", "How to enroll in Employee Stock Purchase plan?"},
                                                   {"user", employee()}}));
    REQUIRE(chat.status == 200);
    CHECK(chat.body.at("bot_id") == "hr");
    CHECK_FALSE(chat.body.at("citations").empty());
    CHECK(chat.body.at("citations")[0].at("doc_id") == "hr-espp");
    const std::string trace_id = chat.body.at("trace_id");

    const auto outsider = api.handle(post(
        "/v1/chat", {{"message", "How to enroll in Employee Stock Purchase plan?"},
                     {"user", {{"user_id", "guest"}, {"groups", {"visitors"}}, {"clearance", "public"}}}}));
    CHECK(outsider.body.at("citations").empty());
    CHECK_THAT(outsider.body.at("answer").get<std::string>(), ContainsSubstring("NO CONTEXT"));

    const auto own = api.handle(get("/v1/traces/" + trace_id, {{"x-user-id", "ann"}}));
    REQUIRE(own.status == 200);
    CHECK(own.body.at("stages").size() == 9);
    CHECK(api.handle(get("/v1/traces/" + trace_id, {{"x-user-id", "bob"}})).status == 403);
    CHECK(api.handle(get("/v1/traces/" + trace_id, {{"x-user-id", "bob"}, {"x-roles", "developer"}})).status == 200);
    CHECK(api.handle(get("/v1/traces/nope", {{"x-roles", "auditor"}})).status == 404);

    const auto bots = api.handle(get("/v1/bots"));
    CHECK(bots.body.at("bots").size() == 4);
    CHECK(bots.body.at("default_bot_id") == "helpdesk");

    const auto fb = api.handle(post("/v1/feedback", {{"trace_id", trace_id}, {"rating", "up"}, {"comment", "ok"}}));
    CHECK(fb.status == 200);
    CHECK(fb.body.at("replaced") == false);
    CHECK(api.handle(post("/v1/feedback", {{"trace_id", trace_id}, {"rating", "down"}})).body.at("replaced") == true);
    CHECK(eng->feedback().get(trace_id)->rating == engine::Rating::down);
    CHECK(api.handle(post("/v1/feedback", {{"trace_id", "ghost"}, {"rating", "up"}})).status == 404);
    CHECK(api.handle(post("/v1/feedback", {{"trace_id", trace_id}, {"rating", "meh"}})).status == 400);

    const auto usage = api.handle(get("/v1/gateway/usage", {}, {{"subscription_id", "default"}}));
    REQUIRE(usage.status == 200);
    CHECK(usage.body.at("total_requests") == 2);
    CHECK(api.handle(get("/v1/gateway/usage", {}, {{"subscription_id", "ghost"}})).status == 404);
    CHECK(api.handle(get("/v1/gateway/audit", {{"x-roles", "developer"}})).status == 403);
    const auto audit = api.handle(get("/v1/gateway/audit", {{"x-roles", "auditor"}}));
    CHECK(audit.body.at("records").size() == 2);

    const auto direct = api.handle(post("/v1/gateway/chat", {{"subscription_id", "default"},
                                                             {"model_id", "mock-small"},
                                                             {"messages", {{{"role", "user"}, {"content", "ping"}}}}}));
    CHECK(direct.body.at("text") == "ECHO: ping");
    CHECK(api.handle(post("/v1/gateway/chat", {{"subscription_id", "default"},
                                               {"model_id", "nope"},
                                               {"messages", json::array()}}))
              .status == 404);

    api.set_auth_hook([](const api::ApiRequest& req, index::Principal& p) {
        if (req.header("x-user-id") != p.user_id) throw Error(ErrorCode::unauthorized, "identity mismatch");
    });
    CHECK(api.handle(post("/v1/chat", {{"message", "vpn"}, {"user", employee()}})).status == 403);

    std::filesystem::remove_all(dir);
}

TEST_CASE("api ingest and eval", "[service]") {
    const auto dir = fixture::temp_dir("api-eval");
    auto eng = demo_engine(dir);
    api::Api api(*eng);

    api::ApiRequest ing;
    ing.method = "POST";
    ing.path = "/v1/ingest";
    ing.query = {{"corpus_id", "enterprise"}};
    ing.body = R"({"doc_id":"it-printer","uri":"kb://printer","format":"plain","acl":["employees"],)"
               R"("sensitivity":"internal","modified_at":"2026-01-05T00:00:00Z","body":"Printers on floor three need the blue driver."})";
    const auto r = api.handle(ing);
    REQUIRE(r.status == 200);
    CHECK(r.body.at("documents") == 1);
    CHECK(r.body.at("chunks") == 1);
    const auto chat = api.handle(post("/v1/chat", {{"message", "printer driver"}, {"user", employee()}, {"bot_id", "it"}}));
    CHECK(chat.body.at("citations")[0].at("doc_id") == "it-printer");

    ing.body = R"({"doc_id":"x","uri":"kb://x","format":"plain","acl":[],"body":"x"})";
    CHECK(api.handle(ing).status == 400);

    std::ifstream suite_in(std::string(RAGDESK_DATA_DIR) + "/demo/suite.jsonl");
    std::stringstream suite;
    suite << suite_in.rdbuf();
    const auto ev = api.handle(post("/v1/eval/run", {{"suite", suite.str()}}));
    REQUIRE(ev.status == 200);
    CHECK(ev.body.at("report").at("rows").size() == 5);
    const auto gated = api.handle(post("/v1/eval/run", {{"suite", suite.str()}, {"baseline", ev.body.at("report")}}));
    CHECK(gated.body.at("gate").at("pass") == true);
    CHECK(api.handle(post("/v1/eval/run", {{"suite", json::array()}})).status == 400);

    const auto grid = api.handle(post("/v1/eval/gridsearch",
                                      {{"suite", suite.str()}, {"grid", {{"axes", {{"top_k", {1, 5}}}}}}}));
    REQUIRE(grid.status == 200);
    CHECK(grid.body.at("ranked").size() == 2);
    std::filesystem::remove_all(dir);
}

TEST_CASE("http server round trip", "[service]") {
    const auto dir = fixture::temp_dir("http");
    auto eng = demo_engine(dir);
    api::Api api(*eng);
    server::Server srv(api);
    const int port = srv.bind_ephemeral("127.0.0.1");
    REQUIRE(port > 0);
    std::thread t([&] { srv.serve_bound(); });

    httplib::Client client("127.0.0.1", port);
    auto health = client.Get("/v1/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");

    const json body{{"message", "My VPN keeps disconnecting"}, {"user", employee()}};
    auto chat = client.Post("/v1/chat", body.dump(), "application/json");
    REQUIRE(chat);
    CHECK(chat->status == 200);
    const auto j = json::parse(chat->body);
    CHECK(j.at("bot_id") == "it");

    auto trace = client.Get("/v1/traces/" + j.at("trace_id").get<std::string>(), {{"X-User-Id", "ann"}});
    REQUIRE(trace);
    CHECK(trace->status == 200);
    auto usage = client.Get("/v1/gateway/usage?subscription_id=default");
    REQUIRE(usage);
    CHECK(json::parse(usage->body).at("total_requests") == 1);

    auto preflight = client.Options("/v1/chat");
    REQUIRE(preflight);
    CHECK(preflight->status == 204);

    srv.stop();
    t.join();
    std::filesystem::remove_all(dir);
}

TEST_CASE("engine state survives a restart", "[service]") {
    const auto dir = fixture::temp_dir("restart");
    std::string trace_id;
    {
        auto eng = demo_engine(dir);
        trace_id = eng->chat({index::principal_from_json(employee()), "vpn drops", {}, std::nullopt, ""}).answer.trace_id;
        eng->save_snapshots();
    }
    CHECK(std::filesystem::exists(dir / "index" / "enterprise"));
    auto eng = demo_engine(dir);
    CHECK(eng->traces().contains(trace_id));
    CHECK(eng->gateway().usage_report("default").total_requests == 1);
    const auto next = eng->chat({index::principal_from_json(employee()), "vpn drops", {}, std::nullopt, ""});
    CHECK(next.answer.trace_id != trace_id);

    index::HybridIndex loaded;
    loaded.load((dir / "index" / "enterprise").string());
    CHECK(loaded.stats().chunk_count == eng->index("enterprise").stats().chunk_count);
    std::filesystem::remove_all(dir);
}

TEST_CASE("cli commands", "[service]") {
    const auto dir = fixture::temp_dir("cli");
    const auto data = (dir / "data").string();

    SECTION("ingest") {
        const auto r = run_cli({"--app", kDemo, "--data-dir", data, "ingest"});
        CHECK(r.code == cli::kExitOk);
        CHECK_THAT(r.out, StartsWith("indexed 11 documents, "));
        CHECK(std::filesystem::exists(dir / "data" / "index" / "finance"));
    }

    SECTION("ask is deterministic") {
        const std::vector<std::string> args{"--app", kDemo, "--data-dir", data, "ask", "--user", "ann",
                                            "--groups", "employees", "How to enroll in Employee Stock Purchase plan?"};
        const auto a = run_cli(args);
        std::filesystem::remove_all(data);
        const auto b = run_cli(args);
        CHECK(a.code == cli::kExitOk);
        CHECK(a.out == b.out);
        CHECK_THAT(a.out, ContainsSubstring("\nCitations:\n  [1] hr-espp"));
        CHECK_THAT(a.out, ContainsSubstring("\nBot: hr\n"));
        CHECK_THAT(a.out, ContainsSubstring("\nTrace: "));
    }

    SECTION("eval and the regression gate") {
        const auto suite = std::string(RAGDESK_DATA_DIR) + "/demo/suite.jsonl";
        const auto report_path = (dir / "report.json").string();
        const auto r = run_cli({"--app", kDemo, "--data-dir", data, "eval", "--suite", suite, "--out", report_path});
        REQUIRE(r.code == cli::kExitOk);
        CHECK(run_cli({"--app", kDemo, "--data-dir", data, "eval", "--suite", suite, "--baseline", report_path}).code ==
              cli::kExitOk);

        auto baseline = json::parse(std::ifstream(report_path));
        // A baseline whose answers matched the gold answers exactly.
        for (auto& row : baseline["rows"]) {
            if (!row["answer_f1"].is_null()) row["answer_f1"] = 1.0;
        }
        write(dir / "strong.json", baseline.dump());
        const auto gate = run_cli({"--app", kDemo, "--data-dir", data, "eval", "--suite", suite, "--baseline",
                                   (dir / "strong.json").string(), "--epsilon", "answer_f1=0.5"});
        CHECK(gate.code == cli::kExitGateFailed);
        CHECK_THAT(gate.out, ContainsSubstring("regression gate: FAIL"));
    }

    SECTION("validation errors") {
        CHECK(run_cli({}).code == cli::kExitValidation);
        CHECK(run_cli({"--app", (dir / "missing.json").string(), "ask", "q"}).code == cli::kExitValidation);
        const auto r = run_cli({"--app", kDemo, "--data-dir", data, "usage", "--subscription", "ghost"});
        CHECK(r.code == cli::kExitValidation);
        CHECK_THAT(r.err, ContainsSubstring("unknown_subscription"));
        CHECK(run_cli({"--app", kDemo, "--data-dir", data, "eval", "--suite", (dir / "none.jsonl").string()}).code ==
              cli::kExitValidation);
    }

    SECTION("usage") {
        run_cli({"--app", kDemo, "--data-dir", data, "ask", "vpn"});
        const auto r = run_cli({"--app", kDemo, "--data-dir", data, "usage", "--subscription", "default"});
        CHECK(r.code == cli::kExitOk);
        CHECK_THAT(r.out, ContainsSubstring("requests: 1 (accepted 1, rejected 0, errored 0)"));
    }
    std::filesystem::remove_all(dir);
}
