#pragma once

// Operator commands behind the specqa executable. Each takes its options and
// output streams and returns the process exit code.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "specqa/corpus.hpp"
#include "specqa/error.hpp"
#include "specqa/ingest.hpp"
#include "specqa/ragqa.hpp"
#include "specqa/retriever.hpp"
#include "specqa/rulecode.hpp"
#include "specqa/service.hpp"

namespace specqa::commands {

namespace fs = std::filesystem;
using nlohmann::json;

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kUpstream = 3 };

inline int exit_code_for(const Error& e) {
    switch (e.code()) {
        case ErrorCode::LlmUnreachable:
        case ErrorCode::LlmProtocolError:
        case ErrorCode::ProviderUnreachable:
        case ErrorCode::RerankUnavailable: return kUpstream;
        case ErrorCode::InvalidArgument:
        case ErrorCode::BudgetTooSmall: return kUsage;
        default: return kData;
    }
}

struct Streams {
    std::ostream& out = std::cout;
    std::ostream& err = std::cerr;
};

inline std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw Error(ErrorCode::IoError, "cannot read " + p.string(), p.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

/// Config file when given, else built-in defaults; environment overrides apply either way.
inline service::ServiceConfig base_config(const std::optional<fs::path>& config_file) {
    auto cfg = config_file ? service::load_config(*config_file) : service::ServiceConfig{};
    service::apply_env_overrides(cfg);
    return cfg;
}

// ---------------------------------------------------------------------------

struct IngestOptions {
    fs::path corpus_dir;
    std::vector<fs::path> paths;
    std::optional<fs::path> config;
    std::optional<std::size_t> max_tokens;
    std::optional<std::size_t> overlap_tokens;
    std::optional<std::size_t> min_tokens;
    std::optional<std::string> subject;
};

/// Adds every readable file to the corpus (doc_id = file stem) and reports
/// per file. Good files are indexed even when others fail; any failure makes
/// the exit code nonzero.
inline int cmd_ingest(const IngestOptions& o, Streams s = {}) {
    auto cfg = base_config(o.config);
    if (o.max_tokens) cfg.index.chunk_policy.max_tokens = *o.max_tokens;
    if (o.overlap_tokens) cfg.index.chunk_policy.overlap_tokens = *o.overlap_tokens;
    if (o.min_tokens) cfg.index.chunk_policy.min_tokens = *o.min_tokens;

    std::vector<ingest::Document> docs;
    if (corpus::has_snapshot(o.corpus_dir)) {
        auto existing = corpus::load_snapshot(o.corpus_dir, cfg.index.provider);
        docs = existing->documents;
        cfg.index.chunk_policy = existing->config.chunk_policy;
        cfg.index.bm25 = existing->config.bm25;
    }
    std::size_t before = docs.size();
    std::size_t failed = 0;
    std::vector<std::pair<fs::path, std::string>> added;
    for (const auto& p : o.paths) {
        try {
            auto doc_id = p.stem().string();
            for (const auto& d : docs) {
                if (d.doc_id == doc_id) throw Error(ErrorCode::DuplicateDocument, "doc_id already indexed: " + doc_id);
            }
            ingest::Metadata meta{{"source_uri", p.string()}};
            if (o.subject) meta["subject"] = *o.subject;
            auto ext = p.extension().string();
            auto doc = ingest::parse_document(read_file(p), doc_id, meta, std::optional<std::string_view>(ext));
            (void)chunker::chunk_document(doc, cfg.index.chunk_policy);
            docs.push_back(std::move(doc));
            added.emplace_back(p, doc_id);
        } catch (const Error& e) {
            ++failed;
            s.err << "FAIL " << p.string() << ": " << e.what() << "\n";
        }
    }
    if (docs.size() > before || !corpus::has_snapshot(o.corpus_dir)) {
        try {
            auto gen = corpus::build_generation(std::move(docs), cfg.index);
            corpus::save_snapshot(*gen, o.corpus_dir);
            for (const auto& [p, id] : added)
                s.out << "ok   " << p.string() << " doc_id=" << id << " chunks=" << gen->chunks.document_size(id) << "\n";
            s.out << added.size() << " document(s) added, " << gen->documents.size() << " in corpus (" << gen->chunks.size()
                  << " chunks)";
            if (failed) s.out << ", " << failed << " failed";
            s.out << "\n";
        } catch (const Error& e) {
            s.err << "error: " << e.what() << "\n";
            return exit_code_for(e);
        }
    } else {
        s.out << "0 document(s) added, " << failed << " failed\n";
    }
    return failed ? kData : kOk;
}

// ---------------------------------------------------------------------------

struct QueryOptions {
    fs::path corpus_dir;
    std::string query;
    std::optional<fs::path> config;
    std::optional<std::size_t> k;
    bool no_rerank = false;
    bool lexical_only = false;
    bool semantic_only = false;
    bool as_json = false;
};

inline corpus::GenerationPtr open_corpus(const fs::path& dir, const service::ServiceConfig& cfg) {
    return corpus::load_snapshot(dir, cfg.index.provider);
}

inline int cmd_query(const QueryOptions& o, Streams s = {}) {
    if (o.lexical_only && o.semantic_only) {
        s.err << "error: --lexical-only and --semantic-only are exclusive\n";
        return kUsage;
    }
    try {
        auto cfg = base_config(o.config);
        auto gen = open_corpus(o.corpus_dir, cfg);
        auto policy = cfg.policy;
        if (o.k) {
            if (*o.k == 0) throw Error(ErrorCode::InvalidArgument, "--k must be >= 1");
            policy.final_k = *o.k;
        }
        if (o.no_rerank) policy.rerank = false;
        auto mode = o.lexical_only    ? retriever::RetrievalMode::lexical
                    : o.semantic_only ? retriever::RetrievalMode::semantic
                                      : retriever::RetrievalMode::hybrid;
        retriever::RetrievalResult result;
        if (!gen->empty()) result = gen->pipeline(policy, cfg.rerank, mode).retrieve(o.query);
        if (o.as_json) {
            s.out << service::retrieval_json(*gen, o.query, result).dump(2) << "\n";
            return kOk;
        }
        if (result.rerank_fallback) s.err << "warning: rerank unavailable, fused order kept (" << *result.rerank_fallback << ")\n";
        if (result.hits.empty()) {
            s.out << "no results\n";
            return kOk;
        }
        for (std::size_t i = 0; i < result.hits.size(); ++i) {
            const auto& h = result.hits[i];
            const auto& c = gen->chunks.at(h.chunk_id);
            s.out << (i + 1) << ". " << std::fixed << std::setprecision(6) << h.score << std::defaultfloat << "  "
                  << h.chunk_id;
            if (!c.heading_path.empty()) s.out << "  [" << text::join(c.heading_path, " > ") << "]";
            s.out << "\n   " << service::snippet(c.body()) << "\n";
        }
        return kOk;
    } catch (const Error& e) {
        s.err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------------------

struct AnswerOptions {
    fs::path corpus_dir;
    std::string question;
    std::optional<fs::path> config;
    std::optional<std::string> llm_endpoint;
    std::optional<std::string> model;
    std::optional<std::size_t> budget_tokens;
    bool no_rerank = false;
    bool as_json = false;
};

inline int cmd_answer(const AnswerOptions& o, Streams s = {}) {
    try {
        auto cfg = base_config(o.config);
        if (o.llm_endpoint) {
            if (!cfg.llm) {
                cfg.llm.emplace();
                cfg.llm->model_name = "local-model";
            }
            cfg.llm->endpoint = *o.llm_endpoint;
        }
        if (!cfg.llm || cfg.llm->endpoint.empty()) {
            s.err << "error: no LLM endpoint; pass --llm-endpoint or a config with an \"llm\" section\n";
            return kUsage;
        }
        if (o.model) cfg.llm->model_name = *o.model;
        if (o.budget_tokens) cfg.budget_tokens = *o.budget_tokens;
        if (o.no_rerank) cfg.policy.rerank = false;
        auto gen = open_corpus(o.corpus_dir, cfg);
        ragqa::Answer answer;
        answer.text = std::string(ragqa::kRefusalText);
        answer.model_name = cfg.llm->model_name;
        if (!gen->empty()) {
            ragqa::AnswerConfig acfg{ragqa::PromptTemplate(cfg.prompt_template), cfg.budget_tokens};
            answer = ragqa::answer_question(*cfg.llm, gen->pipeline(cfg.policy, cfg.rerank), o.question, acfg);
        }
        if (o.as_json) {
            s.out << service::answer_json(answer).dump(2) << "\n";
            return kOk;
        }
        s.out << answer.text << "\n";
        if (answer.status == ragqa::AnswerStatus::answered) {
            s.out << "\nSources:\n";
            for (const auto& c : answer.citations)
                s.out << "  " << ragqa::source_tag(c.window_index, answer.sources[c.window_index]) << " (chunks " << c.lo
                      << "-" << c.hi << ")\n";
        }
        return kOk;
    } catch (const Error& e) {
        s.err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------------------

struct RulesOptions {
    std::string action;  // validate | eval | graph | ontology | gen-tests | extract
    fs::path file;
    std::string format;  // graph: dot|json; ontology: text|json
    std::string station = "base";
    double bandwidth_mhz = 1.0;
    double haat_m = 0.0;
    bool urban = false;
    bool as_json = false;
    bool check = false;
    std::optional<fs::path> config;
    std::optional<std::string> llm_endpoint;
    std::optional<std::string> model;
    std::size_t max_repair_rounds = 2;
};

inline rulecode::RuleSet load_rules(const fs::path& p) {
    return rulecode::parse_ruleset(read_file(p), p.stem().string(), p.string());
}

inline int cmd_rules(const RulesOptions& o, Streams s = {}) {
    try {
        if (o.action == "extract") {
            auto cfg = base_config(o.config);
            if (o.llm_endpoint) {
                if (!cfg.llm) {
                    cfg.llm.emplace();
                    cfg.llm->model_name = "local-model";
                }
                cfg.llm->endpoint = *o.llm_endpoint;
            }
            if (!cfg.llm || cfg.llm->endpoint.empty()) {
                s.err << "error: no LLM endpoint; pass --llm-endpoint or a config with an \"llm\" section\n";
                return kUsage;
            }
            if (o.model) cfg.llm->model_name = *o.model;
            auto ext = o.file.extension().string();
            auto doc = ingest::parse_document(read_file(o.file), o.file.stem().string(), {},
                                              std::optional<std::string_view>(ext));
            std::size_t rounds = 0;
            auto rules = rulecode::extract_rules_llm(*cfg.llm, doc, o.max_repair_rounds, &rounds);
            s.err << "extracted in " << rounds << " attempt(s)\n";
            s.out << rulecode::serialize_ruleset(rules) << "\n";
            return kOk;
        }

        auto rules = load_rules(o.file);
        if (o.action == "validate") {
            s.out << "valid: " << rules.ruleset_id << " (" << rules.band_name << ", " << rules.station_classes.size()
                  << " station classes)\n";
        } else if (o.action == "eval") {
            auto station = rulecode::parse_station_type(o.station);
            if (!station) {
                s.err << "error: --station must be base or mobile\n";
                return kUsage;
            }
            auto limit = rulecode::evaluate_limit(rules, {*station, o.bandwidth_mhz, o.haat_m, o.urban});
            if (o.as_json) {
                s.out << rulecode::to_json(limit).dump(2) << "\n";
            } else {
                s.out << rulecode::format_watts(limit.value_watts, limit.basis) << "\n";
                for (const auto& step : limit.applied_rule_path) s.out << "  " << step << "\n";
            }
        } else if (o.action == "graph") {
            auto g = rulecode::build_knowledge_graph(rules);
            if (o.format == "json") s.out << rulecode::to_json(g).dump(2) << "\n";
            else s.out << rulecode::to_dot(g);
        } else if (o.action == "ontology") {
            auto onto = rulecode::emit_ontology(rules);
            if (o.format == "json") s.out << rulecode::to_json(onto).dump(2) << "\n";
            else s.out << rulecode::render_ontology(onto);
        } else if (o.action == "gen-tests") {
            auto cases = rulecode::generate_rule_tests(rules);
            if (o.check) {
                auto failures = rulecode::replay_rule_tests(rules, cases);
                s.out << cases.size() << " cases, " << failures.size() << " failing\n";
                for (const auto& f : failures) s.out << "  FAIL " << f << "\n";
                return failures.empty() ? kOk : kData;
            }
            json arr = json::array();
            for (const auto& tc : cases) arr.push_back(rulecode::to_json(tc));
            s.out << arr.dump(2) << "\n";
        } else {
            s.err << "error: unknown rules action " << o.action << "\n";
            return kUsage;
        }
        return kOk;
    } catch (const Error& e) {
        s.err << "error: " << e.what() << "\n";
        if (!e.path().empty()) s.err << "path: " << e.path() << "\n";
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------------------

struct LabeledItem {
    std::string query;
    std::optional<std::string> expected_chunk_id;
    std::optional<std::string> expected_text;
};

/// JSON array, or one object per line, of {query, expected_chunk_id | expected_text}.
inline std::vector<LabeledItem> read_queryset(const fs::path& p) {
    auto raw = read_file(p);
    std::vector<json> records;
    auto trimmed = text::trim(raw);
    try {
        if (!trimmed.empty() && trimmed.front() == '[') {
            for (auto& r : json::parse(trimmed)) records.push_back(r);
        } else {
            std::istringstream is(raw);
            std::string line;
            while (std::getline(is, line)) {
                if (!text::trim(line).empty()) records.push_back(json::parse(line));
            }
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidQuery, "queryset " + p.string() + " is not valid JSON: " + e.what(), p.string());
    }
    std::vector<LabeledItem> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        LabeledItem item;
        item.query = r.value("query", std::string{});
        if (r.contains("expected_chunk_id")) item.expected_chunk_id = r["expected_chunk_id"].get<std::string>();
        if (r.contains("expected_text")) item.expected_text = r["expected_text"].get<std::string>();
        if (item.query.empty() || (!item.expected_chunk_id && !item.expected_text))
            throw Error(ErrorCode::InvalidQuery, "queryset record " + std::to_string(i) +
                                                     " needs query and expected_chunk_id or expected_text");
        out.push_back(std::move(item));
    }
    return out;
}

/// expected_text labels resolve to the first chunk (corpus order) whose body
/// contains the text, so a queryset survives re-chunking.
inline std::vector<retriever::LabeledQuery> resolve_labels(const corpus::Generation& g, const std::vector<LabeledItem>& items) {
    std::vector<retriever::LabeledQuery> out;
    for (const auto& item : items) {
        std::string id;
        if (item.expected_chunk_id) {
            id = *item.expected_chunk_id;
        } else {
            for (const auto& c : g.chunks.all()) {
                if (c.text.find(*item.expected_text) != std::string::npos) {
                    id = c.chunk_id;
                    break;
                }
            }
            if (id.empty()) throw Error(ErrorCode::UnknownChunk, "no chunk contains \"" + *item.expected_text + "\"");
        }
        out.push_back({item.query, id});
    }
    return out;
}

struct EvalOptions {
    fs::path corpus_dir;
    fs::path queryset;
    std::optional<fs::path> config;
    std::optional<std::size_t> k;
    std::vector<std::size_t> sweep_max_tokens;
    bool no_rerank = false;
};

inline int cmd_eval(const EvalOptions& o, Streams s = {}) {
    try {
        auto cfg = base_config(o.config);
        auto base = open_corpus(o.corpus_dir, cfg);
        auto items = read_queryset(o.queryset);
        if (items.empty()) throw Error(ErrorCode::InvalidQuery, "queryset is empty");
        auto policy = cfg.policy;
        if (o.k) policy.final_k = *o.k;
        if (o.no_rerank) policy.rerank = false;

        std::vector<corpus::GenerationPtr> gens;
        if (o.sweep_max_tokens.empty()) {
            gens.push_back(base);
        } else {
            for (auto mt : o.sweep_max_tokens) {
                auto icfg = base->config;
                icfg.chunk_policy.max_tokens = mt;
                icfg.chunk_policy.overlap_tokens = std::min(icfg.chunk_policy.overlap_tokens, mt / 2);
                icfg.chunk_policy.min_tokens = std::min(icfg.chunk_policy.min_tokens, mt / 2);
                gens.push_back(corpus::build_generation(base->documents, icfg));
            }
        }
        s.out << std::left << std::setw(12) << "max_tokens" << std::setw(8) << "chunks" << std::setw(6) << "k"
              << std::setw(9) << "queries" << std::setw(11) << "recall@k"
              << "mrr\n";
        for (const auto& g : gens) {
            if (g->empty()) throw Error(ErrorCode::EmptyCorpus, "corpus has no documents");
            auto labels = resolve_labels(*g, items);
            auto m = retriever::evaluate_retrieval(g->pipeline(policy, cfg.rerank), labels);
            std::ostringstream recall, mrr;
            recall << std::fixed << std::setprecision(4) << m.recall_at_k;
            mrr << std::fixed << std::setprecision(4) << m.mrr;
            s.out << std::left << std::setw(12) << g->config.chunk_policy.max_tokens << std::setw(8) << g->chunks.size()
                  << std::setw(6) << m.k << std::setw(9) << m.query_count << std::setw(11) << recall.str() << mrr.str()
                  << "\n";
        }
        return kOk;
    } catch (const Error& e) {
        s.err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------------------

struct ServeOptions {
    std::optional<fs::path> config;
    std::optional<std::string> host;
    std::optional<int> port;
    std::optional<fs::path> corpus_dir;
    std::optional<fs::path> static_dir;
    std::vector<fs::path> rule_files;
};

inline int cmd_serve(const ServeOptions& o, Streams s = {}) {
    try {
        auto cfg = base_config(o.config);
        if (o.host) cfg.host = *o.host;
        if (o.port) cfg.port = *o.port;
        if (o.corpus_dir) cfg.corpus_dir = *o.corpus_dir;
        if (o.static_dir) cfg.static_dir = *o.static_dir;
        for (const auto& f : o.rule_files) cfg.rule_files.push_back(f);
        if (cfg.corpus_dir.empty()) {
            s.err << "error: no corpus directory; pass --corpus or set corpus_dir in the config\n";
            return kUsage;
        }
        service::Service svc(std::move(cfg));
        auto gen = svc.generation();
        s.out << "serving " << gen->documents.size() << " document(s) on http://" << svc.config().host << ":"
              << svc.config().port << std::endl;
        svc.serve();
        return kOk;
    } catch (const Error& e) {
        s.err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

}  // namespace specqa::commands
