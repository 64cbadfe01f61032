#include <string>
#include <vector>

#include <CLI11.hpp>

#include "specqa/commands.hpp"

namespace cmd = specqa::commands;

namespace {

std::vector<std::size_t> parse_size_list(const std::string& csv) {
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while (pos <= csv.size()) {
        auto comma = csv.find(',', pos);
        auto part = csv.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!part.empty()) out.push_back(static_cast<std::size_t>(std::stoul(part)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"specqa: grounded question answering and rules-as-code for spectrum regulation documents"};
    app.require_subcommand(1);
    std::optional<std::filesystem::path> config;
    app.add_option("--config", config, "JSON config file (same format as the service)")->check(CLI::ExistingFile);

    int rc = cmd::kOk;

    // ingest
    cmd::IngestOptions ingest_opts;
    auto* ingest = app.add_subcommand("ingest", "parse, chunk and index files into a corpus directory");
    ingest->add_option("--corpus", ingest_opts.corpus_dir, "corpus directory")->required();
    ingest->add_option("paths", ingest_opts.paths, "HTML or marked-text files")->required();
    ingest->add_option("--max-tokens", ingest_opts.max_tokens, "chunk size budget");
    ingest->add_option("--overlap-tokens", ingest_opts.overlap_tokens, "overlap between neighbouring chunks");
    ingest->add_option("--min-tokens", ingest_opts.min_tokens, "smallest chunk emitted on its own");
    ingest->add_option("--subject", ingest_opts.subject, "subject metadata applied to every file");
    ingest->callback([&] {
        ingest_opts.config = config;
        rc = cmd::cmd_ingest(ingest_opts);
    });

    // query
    cmd::QueryOptions query_opts;
    auto* query = app.add_subcommand("query", "print ranked chunks for a query");
    query->add_option("--corpus", query_opts.corpus_dir, "corpus directory")->required();
    query->add_option("query", query_opts.query, "query text")->required();
    query->add_option("--k", query_opts.k, "number of hits");
    query->add_flag("--no-rerank", query_opts.no_rerank, "skip the reranker even if configured");
    auto* lex = query->add_flag("--lexical-only", query_opts.lexical_only, "BM25 leg only");
    auto* sem = query->add_flag("--semantic-only", query_opts.semantic_only, "embedding leg only");
    lex->excludes(sem);
    query->add_flag("--json", query_opts.as_json, "print the service payload");
    query->callback([&] {
        query_opts.config = config;
        rc = cmd::cmd_query(query_opts);
    });

    // answer
    cmd::AnswerOptions answer_opts;
    auto* answer = app.add_subcommand("answer", "answer a question from the corpus with citations");
    answer->add_option("--corpus", answer_opts.corpus_dir, "corpus directory")->required();
    answer->add_option("question", answer_opts.question, "question text")->required();
    answer->add_option("--llm-endpoint", answer_opts.llm_endpoint, "chat completions URL");
    answer->add_option("--model", answer_opts.model, "model name sent to the endpoint");
    answer->add_option("--budget-tokens", answer_opts.budget_tokens, "prompt token budget");
    answer->add_flag("--no-rerank", answer_opts.no_rerank, "skip the reranker even if configured");
    answer->add_flag("--json", answer_opts.as_json, "print the service payload");
    answer->callback([&] {
        answer_opts.config = config;
        rc = cmd::cmd_answer(answer_opts);
    });

    // rules
    cmd::RulesOptions rules_opts;
    auto* rules = app.add_subcommand("rules", "technical rule files");
    rules->require_subcommand(1);
    auto rules_action = [&](const std::string& name, const std::string& help) {
        auto* sub = rules->add_subcommand(name, help);
        sub->add_option("file", rules_opts.file, "rule file (or source document for extract)")
            ->required()
            ->check(CLI::ExistingFile);
        sub->callback([&, name] {
            rules_opts.action = name;
            rules_opts.config = config;
            rc = cmd::cmd_rules(rules_opts);
        });
        return sub;
    };
    rules_action("validate", "check a rule file against the schema");
    auto* eval_rules = rules_action("eval", "evaluate the limit for one station");
    eval_rules->add_option("--station", rules_opts.station, "base or mobile")->check(CLI::IsMember({"base", "mobile"}));
    eval_rules->add_option("--bandwidth", rules_opts.bandwidth_mhz, "occupied bandwidth in MHz");
    eval_rules->add_option("--haat", rules_opts.haat_m, "height above average terrain in metres");
    eval_rules->add_flag("--urban", rules_opts.urban, "station is in an urban area");
    eval_rules->add_flag("--json", rules_opts.as_json, "print JSON");
    rules_action("graph", "knowledge graph as DOT or JSON")
        ->add_option("--format", rules_opts.format, "dot or json")
        ->check(CLI::IsMember({"dot", "json"}));
    rules_action("ontology", "ontology as text or JSON")
        ->add_option("--format", rules_opts.format, "text or json")
        ->check(CLI::IsMember({"text", "json"}));
    rules_action("gen-tests", "boundary test cases")->add_flag("--check", rules_opts.check, "replay and report failures");
    auto* extract = rules_action("extract", "extract a rule file from a document with an LLM");
    extract->add_option("--llm-endpoint", rules_opts.llm_endpoint, "chat completions URL");
    extract->add_option("--model", rules_opts.model, "model name");
    extract->add_option("--max-repair-rounds", rules_opts.max_repair_rounds, "re-prompts after a schema violation");

    // eval
    cmd::EvalOptions eval_opts;
    std::string sweep;
    auto* eval = app.add_subcommand("eval", "recall@k and MRR over a labelled queryset");
    eval->add_option("--corpus", eval_opts.corpus_dir, "corpus directory")->required();
    eval->add_option("--queryset", eval_opts.queryset, "JSON or JSONL queryset")->required();
    eval->add_option("--k", eval_opts.k, "cutoff");
    eval->add_option("--sweep-max-tokens", sweep, "comma-separated chunk sizes to rebuild and compare");
    eval->add_flag("--no-rerank", eval_opts.no_rerank, "skip the reranker even if configured");
    eval->callback([&] {
        eval_opts.config = config;
        eval_opts.sweep_max_tokens = parse_size_list(sweep);
        rc = cmd::cmd_eval(eval_opts);
    });

    // serve
    cmd::ServeOptions serve_opts;
    auto* serve = app.add_subcommand("serve", "run the HTTP service");
    serve->add_option("--host", serve_opts.host, "listen address");
    serve->add_option("--port", serve_opts.port, "listen port");
    serve->add_option("--corpus", serve_opts.corpus_dir, "corpus directory");
    serve->add_option("--static-dir", serve_opts.static_dir, "directory served at /");
    serve->add_option("--rules", serve_opts.rule_files, "rule files to load");
    serve->callback([&] {
        serve_opts.config = config;
        rc = cmd::cmd_serve(serve_opts);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? cmd::kOk : cmd::kUsage;
    } catch (const specqa::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cmd::exit_code_for(e);
    }
    return rc;
}
