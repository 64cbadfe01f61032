#pragma once

// HTTP facade over one swappable index generation, plus configuration and
// the append-only feedback log. Handlers are plain functions of
// (method, path, body) so they can be exercised without sockets.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "specqa/corpus.hpp"
#include "specqa/error.hpp"
#include "specqa/ingest.hpp"
#include "specqa/ragqa.hpp"
#include "specqa/retriever.hpp"
#include "specqa/rulecode.hpp"
#include "specqa/text.hpp"

namespace specqa::service {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr std::string_view kVersion = "0.1.0";

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    fs::path corpus_dir;
    fs::path feedback_log;  // defaults to <corpus_dir>/feedback.jsonl
    std::vector<fs::path> rule_files;
    std::optional<fs::path> static_dir;
    corpus::IndexConfig index;
    std::optional<ragqa::LlmClient> llm;
    std::optional<retriever::RerankClient> rerank;
    retriever::HybridPolicy policy;
    std::size_t budget_tokens = 3000;
    std::string prompt_template{ragqa::kDefaultTemplate};

    fs::path feedback_path() const { return feedback_log.empty() ? corpus_dir / "feedback.jsonl" : feedback_log; }
};

namespace detail {

inline fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

inline std::chrono::milliseconds ms(const json& j, const char* key, std::chrono::milliseconds fallback) {
    return j.contains(key) ? std::chrono::milliseconds(j.at(key).get<long long>()) : fallback;
}

}  // namespace detail

/// Reads the JSON config. Relative paths resolve against `base_dir`.
inline ServiceConfig config_from_json(const json& j, const fs::path& base_dir = {}) {
    ServiceConfig cfg;
    try {
        if (j.contains("listen")) {
            cfg.host = j["listen"].value("host", cfg.host);
            cfg.port = j["listen"].value("port", cfg.port);
        }
        if (j.contains("corpus_dir")) cfg.corpus_dir = detail::resolve(base_dir, j["corpus_dir"].get<std::string>());
        if (j.contains("feedback_log")) cfg.feedback_log = detail::resolve(base_dir, j["feedback_log"].get<std::string>());
        if (j.contains("static_dir")) cfg.static_dir = detail::resolve(base_dir, j["static_dir"].get<std::string>());
        for (const auto& r : j.value("rules", json::array())) cfg.rule_files.push_back(detail::resolve(base_dir, r.get<std::string>()));

        if (j.contains("embedding")) {
            const auto& e = j["embedding"];
            auto& p = cfg.index.provider;
            p.kind = e.value("kind", std::string("hashed")) == "remote" ? vecindex::ProviderKind::remote
                                                                          : vecindex::ProviderKind::hashed;
            p.endpoint = e.value("endpoint", std::string{});
            p.model_name = e.value("model", std::string{});
            p.dim = e.value("dim", p.dim);
            p.batch_size = e.value("batch_size", p.batch_size);
            p.timeout = detail::ms(e, "timeout_ms", p.timeout);
        }
        if (j.contains("chunking")) {
            const auto& c = j["chunking"];
            auto& cp = cfg.index.chunk_policy;
            cp.max_tokens = c.value("max_tokens", cp.max_tokens);
            cp.overlap_tokens = c.value("overlap_tokens", cp.overlap_tokens);
            cp.min_tokens = c.value("min_tokens", cp.min_tokens);
        }
        if (j.contains("bm25")) {
            cfg.index.bm25.k1 = j["bm25"].value("k1", cfg.index.bm25.k1);
            cfg.index.bm25.b = j["bm25"].value("b", cfg.index.bm25.b);
        }
        if (j.contains("llm")) {
            const auto& l = j["llm"];
            ragqa::LlmClient llm;
            llm.endpoint = l.value("endpoint", std::string{});
            llm.model_name = l.value("model", std::string("local-model"));
            llm.temperature = l.value("temperature", llm.temperature);
            llm.max_output_tokens = l.value("max_output_tokens", llm.max_output_tokens);
            llm.timeout = detail::ms(l, "timeout_ms", llm.timeout);
            cfg.llm = std::move(llm);
        }
        if (j.contains("rerank")) {
            retriever::RerankClient rc;
            rc.endpoint = j["rerank"].value("endpoint", std::string{});
            rc.timeout = detail::ms(j["rerank"], "timeout_ms", rc.timeout);
            cfg.rerank = std::move(rc);
        }
        if (j.contains("retrieval")) {
            const auto& r = j["retrieval"];
            auto& p = cfg.policy;
            p.k_semantic = r.value("k_semantic", p.k_semantic);
            p.k_lexical = r.value("k_lexical", p.k_lexical);
            p.rrf_k = r.value("rrf_k", p.rrf_k);
            p.final_k = r.value("final_k", p.final_k);
            p.expansion_m = r.value("expansion_m", p.expansion_m);
            p.rerank = r.value("rerank", p.rerank);
            p.min_semantic_score = r.value("min_semantic_score", p.min_semantic_score);
        }
        cfg.budget_tokens = j.value("budget_tokens", cfg.budget_tokens);
        cfg.prompt_template = j.value("prompt_template", cfg.prompt_template);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("bad config: ") + e.what());
    }
    return cfg;
}

inline ServiceConfig load_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorCode::IoError, "cannot read config " + path.string(), path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, "config " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j, path.parent_path());
}

/// SPECQA_LLM_ENDPOINT, SPECQA_EMBED_ENDPOINT, SPECQA_RERANK_ENDPOINT and
/// SPECQA_API_KEY override the file. `getenv` is injectable for tests.
inline void apply_env_overrides(ServiceConfig& cfg,
                                const std::function<const char*(const char*)>& getenv = [](const char* k) {
                                    return std::getenv(k);
                                }) {
    auto get = [&](const char* k) -> std::optional<std::string> {
        const char* v = getenv(k);
        if (!v || !*v) return std::nullopt;
        return std::string(v);
    };
    if (auto v = get("SPECQA_LLM_ENDPOINT")) {
        if (!cfg.llm) {
            cfg.llm = ragqa::LlmClient{};
            cfg.llm->model_name = "local-model";
        }
        cfg.llm->endpoint = *v;
    }
    if (auto v = get("SPECQA_EMBED_ENDPOINT")) cfg.index.provider.endpoint = *v;
    if (auto v = get("SPECQA_RERANK_ENDPOINT")) {
        if (!cfg.rerank) cfg.rerank = retriever::RerankClient{};
        cfg.rerank->endpoint = *v;
    }
    if (auto v = get("SPECQA_API_KEY")) {
        if (cfg.llm) cfg.llm->api_key = *v;
        if (cfg.rerank) cfg.rerank->api_key = *v;
        cfg.index.provider.api_key = *v;
    }
}

// ---------------------------------------------------------------------------
// Feedback log

enum class Rating { correct, incorrect, unsure };

inline std::optional<Rating> parse_rating(std::string_view s) {
    if (s == "correct") return Rating::correct;
    if (s == "incorrect") return Rating::incorrect;
    if (s == "unsure") return Rating::unsure;
    return std::nullopt;
}

constexpr std::string_view to_string(Rating r) noexcept {
    switch (r) {
        case Rating::correct: return "correct";
        case Rating::incorrect: return "incorrect";
        case Rating::unsure: return "unsure";
    }
    return "unsure";
}

struct FeedbackEntry {
    std::string entry_id;
    std::string question;
    std::string answer_text;
    Rating rating = Rating::unsure;
    std::string reviewer_note;
    std::int64_t timestamp_ms = 0;
};

inline std::string iso8601_utc(std::int64_t ms) {
    std::time_t secs = static_cast<std::time_t>(ms / 1000);
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms % 1000));
    return buf;
}

inline json to_json(const FeedbackEntry& e) {
    return {{"entry_id", e.entry_id},
            {"question", e.question},
            {"answer", e.answer_text},
            {"rating", to_string(e.rating)},
            {"note", e.reviewer_note},
            {"timestamp", iso8601_utc(e.timestamp_ms)},
            {"timestamp_ms", e.timestamp_ms}};
}

/// Line-delimited, append-only. Ids are "fb-<n>" in arrival order and
/// timestamps never go backwards, even if the wall clock does.
class FeedbackLog {
public:
    using Clock = std::function<std::int64_t()>;

    explicit FeedbackLog(fs::path path, Clock clock = system_ms) : path_(std::move(path)), clock_(std::move(clock)) {
        std::ifstream is(path_);
        std::string line;
        while (std::getline(is, line)) {
            if (text::trim(line).empty()) continue;
            try {
                auto j = json::parse(line);
                last_ms_ = std::max(last_ms_, j.value("timestamp_ms", std::int64_t{0}));
                ++count_;
            } catch (const json::exception&) {
                throw Error(ErrorCode::IoError, "feedback log has a corrupt line: " + path_.string(), path_.string());
            }
        }
    }

    static std::int64_t system_ms() {
        return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
            .count();
    }

    FeedbackEntry append(FeedbackEntry e) {
        std::lock_guard lock(mu_);
        e.entry_id = "fb-" + std::to_string(count_ + 1);
        e.timestamp_ms = std::max(clock_(), last_ms_);
        if (!path_.parent_path().empty()) fs::create_directories(path_.parent_path());
        std::ofstream os(path_, std::ios::app);
        os << to_json(e).dump() << '\n';
        os.flush();
        if (!os) throw Error(ErrorCode::IoError, "cannot append to " + path_.string(), path_.string());
        ++count_;
        last_ms_ = e.timestamp_ms;
        return e;
    }

    std::vector<json> entries() const {
        std::lock_guard lock(mu_);
        std::vector<json> out;
        std::ifstream is(path_);
        std::string line;
        while (std::getline(is, line)) {
            if (!text::trim(line).empty()) out.push_back(json::parse(line));
        }
        return out;
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return count_;
    }

private:
    fs::path path_;
    Clock clock_;
    mutable std::mutex mu_;
    std::size_t count_ = 0;
    std::int64_t last_ms_ = 0;
};

// ---------------------------------------------------------------------------
// Payloads

inline constexpr std::size_t kSnippetBytes = 240;

inline std::string snippet(std::string_view s) {
    auto t = text::collapse_whitespace(s);
    return t.size() <= kSnippetBytes ? t : text::utf8_prefix(t, kSnippetBytes) + "...";
}

inline json window_json(const retriever::ContextWindow& w) {
    return {{"doc_id", w.doc_id},
            {"lo", w.lo},
            {"hi", w.hi},
            {"score", w.score},
            {"heading_path", w.heading_path},
            {"seed_chunk_ids", w.seed_chunk_ids},
            {"text", w.text}};
}

inline json retrieval_json(const corpus::Generation& g, std::string_view query, const retriever::RetrievalResult& r) {
    json hits = json::array();
    for (std::size_t i = 0; i < r.hits.size(); ++i) {
        const auto& h = r.hits[i];
        const auto& c = g.chunks.at(h.chunk_id);
        hits.push_back({{"rank", i + 1},
                        {"chunk_id", h.chunk_id},
                        {"doc_id", c.doc_id},
                        {"heading_path", c.heading_path},
                        {"score", h.score},
                        {"source", to_string(h.source)},
                        {"snippet", snippet(c.body())}});
    }
    json windows = json::array();
    for (const auto& w : r.windows) {
        auto wj = window_json(w);
        wj.erase("text");
        wj["preview"] = snippet(w.text);
        windows.push_back(std::move(wj));
    }
    json out = {{"query", query},
                {"hits", hits},
                {"windows", windows},
                {"reranked", r.reranked},
                {"corpus_fingerprint", g.corpus_fingerprint()}};
    if (r.rerank_fallback) out["rerank_fallback"] = *r.rerank_fallback;
    return out;
}

inline json answer_json(const ragqa::Answer& a) {
    json citations = json::array();
    for (const auto& c : a.citations) {
        const auto& w = a.sources[c.window_index];
        citations.push_back({{"tag", "S" + std::to_string(c.window_index)},
                             {"window_index", c.window_index},
                             {"doc_id", c.doc_id},
                             {"lo", c.lo},
                             {"hi", c.hi},
                             {"heading_path", w.heading_path},
                             {"snippet", snippet(w.text)}});
    }
    json sources = json::array();
    for (const auto& w : a.sources) sources.push_back(window_json(w));
    return {{"status", to_string(a.status)},
            {"text", a.text},
            {"citations", citations},
            {"model_name", a.model_name},
            {"prompt_token_estimate", a.prompt_token_estimate},
            {"sources", sources}};
}

struct HttpResult {
    int status = 200;
    json body;
};

inline HttpResult error_result(int status, std::string_view code, const std::string& message) {
    return {status, {{"error", {{"code", code}, {"message", message}}}}};
}

inline HttpResult error_result(int status, const Error& e) { return error_result(status, to_string(e.code()), e.what()); }

// ---------------------------------------------------------------------------
// Service

class Service {
public:
    explicit Service(ServiceConfig cfg) : cfg_(std::move(cfg)), feedback_(cfg_.feedback_path()) {
        cfg_.policy.validate();
        ragqa::PromptTemplate check(cfg_.prompt_template);
        prompt_template_ = check;
        if (!cfg_.corpus_dir.empty() && corpus::has_snapshot(cfg_.corpus_dir)) {
            gen_ = corpus::load_snapshot(cfg_.corpus_dir, cfg_.index.provider);
        } else {
            gen_ = corpus::build_generation({}, cfg_.index);
        }
        for (const auto& f : cfg_.rule_files) add_ruleset_file(f);
    }

    const ServiceConfig& config() const noexcept { return cfg_; }

    corpus::GenerationPtr generation() const {
        std::lock_guard lock(gen_mu_);
        return gen_;
    }

    void add_ruleset(rulecode::RuleSet rules) {
        std::lock_guard lock(rules_mu_);
        auto id = rules.ruleset_id;
        rulesets_[id] = std::make_shared<const rulecode::RuleSet>(std::move(rules));
    }

    void add_ruleset_file(const fs::path& path) {
        std::ifstream is(path);
        if (!is) throw Error(ErrorCode::IoError, "cannot read rule file " + path.string(), path.string());
        std::stringstream ss;
        ss << is.rdbuf();
        add_ruleset(rulecode::parse_ruleset(ss.str(), path.stem().string(), path.string()));
    }

    HttpResult handle(std::string_view method, std::string_view path, std::string_view body) {
        if (method == "GET") {
            if (path == "/health") return health();
            if (path == "/rules") return rules_list();
            if (path == "/feedback") return feedback_list();
        } else if (method == "POST") {
            if (path == "/ingest") return ingest(body);
            if (path == "/query") return query(body);
            if (path == "/answer") return answer(body);
            if (path == "/rules/evaluate") return rules_evaluate(body);
            if (path == "/feedback") return feedback(body);
        }
        return error_result(404, "NotFound", "no route for " + std::string(method) + " " + std::string(path));
    }

    /// {doc_id, content, format?, metadata?}. Rebuilds both indexes, persists
    /// the snapshot, then swaps the generation; readers keep the old one.
    HttpResult ingest(std::string_view body) {
        if (text::trim(body).empty()) return error_result(400, "EmptyInput", "request body is empty");
        json j;
        if (auto bad = parse_body(body, j)) return *bad;
        std::string doc_id = j.value("doc_id", std::string{});
        std::string content = j.value("content", std::string{});
        if (doc_id.empty()) return error_result(400, "InvalidArgument", "doc_id is required");
        ingest::Metadata meta;
        std::optional<std::string> hint;
        try {
            if (j.contains("metadata")) meta = j["metadata"].get<ingest::Metadata>();
            if (j.contains("format")) hint = j["format"].get<std::string>() == "html" ? ".html" : ".txt";
        } catch (const json::exception& e) {
            return error_result(400, "InvalidArgument", e.what());
        }
        std::lock_guard writer(writer_mu_);
        auto current = generation();
        if (current->find_document(doc_id)) return error_result(409, "DuplicateDocument", "doc_id already indexed: " + doc_id);
        try {
            auto doc = ingest::parse_document(content, doc_id, meta,
                                              hint ? std::optional<std::string_view>(*hint) : std::nullopt);
            auto next = corpus::with_document(*current, std::move(doc));
            if (!cfg_.corpus_dir.empty()) corpus::save_snapshot(*next, cfg_.corpus_dir);
            {
                std::lock_guard lock(gen_mu_);
                gen_ = next;
            }
            return {200, {{"doc_id", doc_id}, {"chunk_count", next->chunks.document_size(doc_id)},
                          {"corpus_fingerprint", next->corpus_fingerprint()}}};
        } catch (const Error& e) {
            switch (e.code()) {
                case ErrorCode::DuplicateDocument: return error_result(409, e);
                case ErrorCode::ProviderUnreachable: return error_result(502, e);
                case ErrorCode::IoError: return error_result(500, e);
                default: return error_result(400, e);
            }
        }
    }

    /// {query, k?, mode?: hybrid|lexical|semantic}
    HttpResult query(std::string_view body) const {
        json j;
        if (auto bad = parse_body(body, j)) return *bad;
        std::string q = j.value("query", std::string{});
        if (text::trim(q).empty()) return error_result(400, "InvalidArgument", "query is empty");
        auto policy = cfg_.policy;
        if (j.contains("k")) {
            if (!j["k"].is_number_integer() || j["k"].get<long long>() <= 0)
                return error_result(400, "InvalidArgument", "k must be a positive integer");
            policy.final_k = j["k"].get<std::size_t>();
        }
        auto mode = retriever::RetrievalMode::hybrid;
        auto m = j.value("mode", std::string("hybrid"));
        if (m == "lexical") mode = retriever::RetrievalMode::lexical;
        else if (m == "semantic") mode = retriever::RetrievalMode::semantic;
        else if (m != "hybrid") return error_result(400, "InvalidArgument", "mode must be hybrid, lexical or semantic");
        auto gen = generation();
        if (gen->empty()) return {200, retrieval_json(*gen, q, {})};
        try {
            auto result = gen->pipeline(policy, cfg_.rerank, mode).retrieve(q);
            return {200, retrieval_json(*gen, q, result)};
        } catch (const Error& e) {
            return map_pipeline_error(e);
        }
    }

    /// {question}
    HttpResult answer(std::string_view body) const {
        json j;
        if (auto bad = parse_body(body, j)) return *bad;
        std::string question = j.value("question", std::string{});
        if (text::trim(question).empty()) return error_result(400, "InvalidArgument", "question is empty");
        auto gen = generation();
        ragqa::Answer refused;
        refused.text = std::string(ragqa::kRefusalText);
        if (cfg_.llm) refused.model_name = cfg_.llm->model_name;
        if (gen->empty()) return {200, answer_json(refused)};
        try {
            auto pipeline = gen->pipeline(cfg_.policy, cfg_.rerank);
            if (!cfg_.llm) {
                if (pipeline.retrieve(question).windows.empty()) return {200, answer_json(refused)};
                return error_result(503, "LlmNotConfigured", "no LLM endpoint is configured");
            }
            ragqa::AnswerConfig acfg{*prompt_template_, cfg_.budget_tokens};
            return {200, answer_json(ragqa::answer_question(*cfg_.llm, pipeline, question, acfg))};
        } catch (const Error& e) {
            return map_pipeline_error(e);
        }
    }

    /// {ruleset_id, station, occupied_bandwidth_mhz, haat_m, urban}
    HttpResult rules_evaluate(std::string_view body) const {
        json j;
        if (auto bad = parse_body(body, j)) return *bad;
        std::shared_ptr<const rulecode::RuleSet> rules;
        {
            std::lock_guard lock(rules_mu_);
            auto id = j.value("ruleset_id", std::string{});
            if (id.empty() && rulesets_.size() == 1) id = rulesets_.begin()->first;
            auto it = rulesets_.find(id);
            if (it == rulesets_.end()) return error_result(404, "UnknownRuleset", "no rule set named \"" + id + "\"");
            rules = it->second;
        }
        try {
            auto q = rulecode::station_query_from_json(j);
            auto limit = rulecode::evaluate_limit(*rules, q);
            auto out = rulecode::to_json(limit);
            out["ruleset_id"] = rules->ruleset_id;
            out["display"] = rulecode::format_watts(limit.value_watts, limit.basis);
            return {200, out};
        } catch (const Error& e) {
            if (e.code() == ErrorCode::InvalidQuery) return error_result(400, e);
            return error_result(422, e);
        }
    }

    HttpResult rules_list() const {
        std::lock_guard lock(rules_mu_);
        json list = json::array();
        for (const auto& [id, r] : rulesets_) {
            json classes = json::array();
            for (const auto& c : r->station_classes)
                classes.push_back({{"name", c.name}, {"kind", to_string(c.kind)}, {"bandwidth_rule", to_string(c.bandwidth_rule)}});
            list.push_back({{"ruleset_id", id},
                            {"band_name", r->band_name},
                            {"bandwidth_threshold_mhz", r->bandwidth_threshold_mhz},
                            {"station_classes", classes}});
        }
        return {200, {{"rulesets", list}}};
    }

    /// {question?, answer?, rating, note?}
    HttpResult feedback(std::string_view body) {
        json j;
        if (auto bad = parse_body(body, j)) return *bad;
        if (!j.contains("rating") || !j["rating"].is_string())
            return error_result(400, "InvalidArgument", "rating is required (correct, incorrect or unsure)");
        auto rating = parse_rating(j["rating"].get<std::string>());
        if (!rating) return error_result(400, "InvalidArgument", "rating must be correct, incorrect or unsure");
        FeedbackEntry e;
        e.question = j.value("question", std::string{});
        e.answer_text = j.value("answer", std::string{});
        e.reviewer_note = j.value("note", std::string{});
        e.rating = *rating;
        try {
            auto stored = feedback_.append(std::move(e));
            return {200, {{"entry_id", stored.entry_id}, {"timestamp", iso8601_utc(stored.timestamp_ms)}}};
        } catch (const Error& err) {
            return error_result(500, err);
        }
    }

    HttpResult feedback_list() const { return {200, {{"entries", feedback_.entries()}}}; }

    HttpResult health() const {
        auto gen = generation();
        std::lock_guard lock(rules_mu_);
        json ids = json::array();
        for (const auto& [id, r] : rulesets_) ids.push_back(id);
        return {200,
                {{"status", "ok"},
                 {"build", "specqa/" + std::string(kVersion)},
                 {"corpus_fingerprint", gen->corpus_fingerprint()},
                 {"provider_fingerprint", gen->config.provider.fingerprint()},
                 {"documents", gen->documents.size()},
                 {"chunks", gen->chunks.size()},
                 {"rulesets", ids},
                 {"llm_configured", cfg_.llm.has_value()}}};
    }

    /// Blocking listen on the configured address.
    void serve() {
        server_ = std::make_unique<httplib::Server>();
        install_routes(*server_);
        if (!server_->listen(cfg_.host, cfg_.port))
            throw Error(ErrorCode::IoError, "cannot listen on " + cfg_.host + ":" + std::to_string(cfg_.port));
    }

    /// Listens on an ephemeral port in a background thread; returns the port.
    int serve_background(std::thread& worker) {
        server_ = std::make_unique<httplib::Server>();
        install_routes(*server_);
        int port = server_->bind_to_any_port(cfg_.host);
        if (port <= 0) throw Error(ErrorCode::IoError, "cannot bind " + cfg_.host);
        worker = std::thread([this] { server_->listen_after_bind(); });
        server_->wait_until_ready();
        return port;
    }

    void stop() {
        if (server_) server_->stop();
    }

private:
    static std::optional<HttpResult> parse_body(std::string_view body, json& out) {
        if (text::trim(body).empty()) return error_result(400, "EmptyInput", "request body is empty");
        try {
            out = json::parse(body);
        } catch (const json::exception& e) {
            return error_result(400, "InvalidArgument", std::string("body is not valid JSON: ") + e.what());
        }
        if (!out.is_object()) return error_result(400, "InvalidArgument", "body must be a JSON object");
        return std::nullopt;
    }

    static HttpResult map_pipeline_error(const Error& e) {
        switch (e.code()) {
            case ErrorCode::LlmUnreachable:
            case ErrorCode::LlmProtocolError:
            case ErrorCode::ProviderUnreachable: return error_result(502, e);
            case ErrorCode::IndexMismatch:
            case ErrorCode::DimensionMismatch: return error_result(500, e);
            default: return error_result(400, e);
        }
    }

    void install_routes(httplib::Server& svr) {
        auto bind = [this](std::string method, std::string path) {
            return [this, method, path](const httplib::Request& req, httplib::Response& res) {
                auto r = handle(method, path, req.body);
                res.status = r.status;
                res.set_content(r.body.dump(), "application/json");
            };
        };
        for (const char* p : {"/ingest", "/query", "/answer", "/rules/evaluate", "/feedback"}) svr.Post(p, bind("POST", p));
        for (const char* p : {"/health", "/rules", "/feedback"}) svr.Get(p, bind("GET", p));
        if (cfg_.static_dir) svr.set_mount_point("/", cfg_.static_dir->string());
    }

    ServiceConfig cfg_;
    std::optional<ragqa::PromptTemplate> prompt_template_;
    mutable FeedbackLog feedback_;
    mutable std::mutex gen_mu_;
    std::mutex writer_mu_;
    corpus::GenerationPtr gen_;
    mutable std::mutex rules_mu_;
    std::map<std::string, std::shared_ptr<const rulecode::RuleSet>> rulesets_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace specqa::service
