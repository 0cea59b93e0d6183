#include "ragdesk/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>

#include "ragdesk/api.hpp"
#include "ragdesk/server.hpp"

namespace ragdesk::cli {

using nlohmann::json;

namespace {

std::set<std::string> split_csv(const std::string& s) {
    std::set<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.insert(item);
    }
    return out;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::not_found, "cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::validation, path + ": " + e.what());
    }
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::validation, "cannot write '" + path + "'");
    out << text;
}

struct Globals {
    std::string app_config = "ragdesk.json";
    std::string data_dir;
};

std::unique_ptr<engine::Engine> open_engine(const Globals& g) {
    auto cfg = config::AppConfig::load_file(g.app_config);
    if (!g.data_dir.empty()) cfg.data_dir = g.data_dir;
    return std::make_unique<engine::Engine>(std::move(cfg));
}

void print_answer(std::ostream& out, const engine::ChatOutput& o) {
    out << o.answer.text << "\n";
    if (o.answer.blocked) out << "\nBlocked: " << o.answer.block_reason.value_or("") << "\n";
    out << "\nCitations:\n";
    if (o.answer.citations.empty()) out << "  (none)\n";
    for (const auto& c : o.answer.citations) {
        out << "  [" << c.marker << "] " << c.doc_id << " (" << c.uri << ") " << c.chunk_id << "\n";
    }
    out << "Bot: " << o.bot_id << "\n";
    out << "Trace: " << o.answer.trace_id << "\n";
}

std::map<std::string, double> parse_epsilons(const std::vector<std::string>& items) {
    std::map<std::string, double> eps;
    for (const auto& item : items) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::validation, "--epsilon expects metric=value, got '" + item + "'");
        try {
            eps[item.substr(0, eq)] = std::stod(item.substr(eq + 1));
        } catch (const std::exception&) {
            throw Error(ErrorCode::validation, "--epsilon value '" + item.substr(eq + 1) + "' is not a number");
        }
    }
    return eps;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"ragdesk: retrieval augmented answering engine"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--app", g.app_config, "Service config file")->envname("RAGDESK_CONFIG");
    app.add_option("--data-dir", g.data_dir, "Override the configured data directory");

    std::string corpus_file, corpus_id;
    auto* ingest_cmd = app.add_subcommand("ingest", "Index the configured corpora (or one manifest)");
    ingest_cmd->add_option("--corpus", corpus_file, "JSONL manifest to ingest");
    ingest_cmd->add_option("--corpus-id", corpus_id, "Target corpus");

    std::string user = "anonymous", groups, clearance = "internal", bot_id, question;
    auto* ask_cmd = app.add_subcommand("ask", "Answer one question");
    ask_cmd->add_option("--user", user);
    ask_cmd->add_option("--groups", groups, "Comma separated groups");
    ask_cmd->add_option("--clearance", clearance);
    ask_cmd->add_option("--bot", bot_id);
    ask_cmd->add_option("question", question)->required();

    std::string listen;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
    serve_cmd->add_option("--listen", listen, "host:port (defaults to the config)");

    std::string suite_path, pipeline_path, baseline_path, out_path;
    std::vector<std::string> epsilons;
    auto* eval_cmd = app.add_subcommand("eval", "Run an evaluation suite");
    eval_cmd->add_option("--suite", suite_path)->required();
    eval_cmd->add_option("--config", pipeline_path, "Pipeline config overrides (JSON)");
    eval_cmd->add_option("--baseline", baseline_path, "Baseline report for the regression gate");
    eval_cmd->add_option("--epsilon", epsilons, "Allowed drop, metric=value");
    eval_cmd->add_option("--out", out_path, "Report path");
    eval_cmd->add_option("--corpus-id", corpus_id);

    std::string grid_path;
    auto* grid_cmd = app.add_subcommand("gridsearch", "Search pipeline configurations");
    grid_cmd->add_option("--grid", grid_path)->required();
    grid_cmd->add_option("--suite", suite_path)->required();
    grid_cmd->add_option("--out", out_path, "Result path");
    grid_cmd->add_option("--corpus-id", corpus_id);

    std::string subscription, from, to;
    auto* usage_cmd = app.add_subcommand("usage", "Print the cost summary of a subscription");
    usage_cmd->add_option("--subscription", subscription)->required();
    usage_cmd->add_option("--from", from, "ISO-8601, inclusive");
    usage_cmd->add_option("--to", to, "ISO-8601, exclusive");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (ingest_cmd->parsed()) {
            auto eng = open_engine(g);
            engine::IngestSummary s;
            if (!corpus_file.empty()) {
                const std::string target =
                    corpus_id.empty() ? eng->orchestrator().bot(eng->orchestrator().default_bot_id()).corpus_id : corpus_id;
                s = eng->ingest(target, ingest::load_manifest_file(corpus_file));
            } else {
                for (const auto& id : eng->corpus_ids()) {
                    s.documents += eng->documents(id).size();
                    s.chunks += eng->index(id).stats().chunk_count;
                }
            }
            eng->save_snapshots();
            out << "indexed " << s.documents << " documents, " << s.chunks << " chunks\n";
            return kExitOk;
        }
        if (ask_cmd->parsed()) {
            auto eng = open_engine(g);
            engine::ChatInput in;
            in.principal.user_id = user;
            in.principal.groups = split_csv(groups);
            in.principal.clearance = parse_sensitivity(clearance);
            in.message = question;
            if (!bot_id.empty()) in.bot_id = bot_id;
            print_answer(out, eng->chat(in));
            return kExitOk;
        }
        if (serve_cmd->parsed()) {
            auto eng = open_engine(g);
            api::Api api(*eng);
            server::Server srv(api);
            config::AppConfig c = eng->config();
            if (!listen.empty()) c.listen = listen;
            if (c.listen_port() <= 0) throw Error(ErrorCode::validation, "--listen expects host:port");
            out << "listening on " << c.listen << std::endl;
            if (!srv.listen(c.listen_host(), c.listen_port())) {
                err << "error: cannot bind " << c.listen << "\n";
                return kExitValidation;
            }
            return kExitOk;
        }
        if (eval_cmd->parsed()) {
            auto eng = open_engine(g);
            const auto suite = ragops::load_suite_file(suite_path);
            std::optional<json> overrides;
            if (!pipeline_path.empty()) overrides = read_json_file(pipeline_path);
            std::optional<std::string> cid;
            if (!corpus_id.empty()) cid = corpus_id;
            const auto report = eng->evaluate(suite, overrides, cid);
            const std::string path =
                out_path.empty() ? (std::filesystem::path(eng->config().data_dir) / "eval-report.json").string() : out_path;
            write_file(path, report.to_json().dump(2) + "\n");
            out << report.text_table();
            out << "report: " << path << "\n";
            if (!baseline_path.empty()) {
                const auto baseline = ragops::EvalReport::from_json(read_json_file(baseline_path));
                const auto gate = ragops::regression_gate(baseline, report, parse_epsilons(epsilons));
                if (gate.pass) {
                    out << "regression gate: PASS\n";
                } else {
                    out << "regression gate: FAIL\n";
                    for (const auto& f : gate.failures) {
                        out << "  " << f.metric << ": " << f.baseline << " -> " << f.candidate
                            << " (allowed drop " << f.allowed_drop << ")\n";
                    }
                    return kExitGateFailed;
                }
            }
            return kExitOk;
        }
        if (grid_cmd->parsed()) {
            auto eng = open_engine(g);
            const auto grid = ragops::GridSpec::from_json(read_json_file(grid_path));
            const auto suite = ragops::load_suite_file(suite_path);
            std::optional<std::string> cid;
            if (!corpus_id.empty()) cid = corpus_id;
            const auto result = eng->grid_search(grid, suite, cid);
            if (!out_path.empty()) write_file(out_path, result.to_json().dump(2) + "\n");
            out << result.text_table();
            return kExitOk;
        }
        if (usage_cmd->parsed()) {
            auto eng = open_engine(g);
            gateway::TimeWindow w;
            if (!from.empty()) w.from = parse_iso8601(from);
            if (!to.empty()) w.to = parse_iso8601(to);
            const auto r = eng->gateway().usage_report(subscription, w);
            out << "subscription: " << r.subscription_id << "\n";
            out << "total_cost: " << r.total_cost.to_string() << "\n";
            out << "requests: " << r.total_requests << " (accepted " << r.accepted << ", rejected " << r.rejected
                << ", errored " << r.errored << ")\n";
            for (const auto& [model, u] : r.per_model) {
                out << "  " << std::left << std::setw(20) << model << std::setw(8) << u.requests << u.cost.to_string()
                    << "\n";
            }
            return kExitOk;
        }
    } catch (const Error& e) {
        err << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitValidation;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"ragdesk"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace ragdesk::cli
