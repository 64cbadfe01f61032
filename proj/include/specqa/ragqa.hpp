#pragma once

// Grounded answering: prompt assembly with source tags, chat-completions
// client, citation attribution and the structural refusal rule.

#include <chrono>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "specqa/error.hpp"
#include "specqa/http.hpp"
#include "specqa/retriever.hpp"
#include "specqa/text.hpp"

namespace specqa::ragqa {

using retriever::ContextWindow;

inline constexpr std::string_view kDefaultTemplate =
    "You are a helpful, respectful and honest assistant. Use the following context information to answer the "
    "user's question. If you don't know the answer, just say that you don't know, don't try to make up an answer. "
    "Context: {context} Question: {question}";

/// Returned verbatim whenever retrieval yields no context.
inline constexpr std::string_view kRefusalText =
    "I don't know. No relevant context was found in the indexed documents.";

class PromptTemplate {
public:
    static constexpr std::string_view kContextSlot = "{context}";
    static constexpr std::string_view kQuestionSlot = "{question}";

    PromptTemplate() : PromptTemplate(kDefaultTemplate) {}

    /// Both slots must appear exactly once.
    explicit PromptTemplate(std::string_view text) : text_(text) {
        auto count = [&](std::string_view slot) {
            std::size_t n = 0;
            for (auto p = text_.find(slot); p != std::string::npos; p = text_.find(slot, p + slot.size())) ++n;
            return n;
        };
        if (count(kContextSlot) != 1 || count(kQuestionSlot) != 1)
            throw Error(ErrorCode::InvalidArgument, "prompt template needs {context} and {question} exactly once");
        context_pos_ = text_.find(kContextSlot);
        question_pos_ = text_.find(kQuestionSlot);
    }

    const std::string& text() const noexcept { return text_; }

    /// Tokens of the fixed template text, slots excluded.
    std::size_t fixed_tokens() const { return text::count_tokens(render("", "")); }

    /// Single-pass substitution: slot markers inside the values stay literal.
    std::string render(std::string_view context, std::string_view question) const {
        struct Slot {
            std::size_t pos;
            std::size_t len;
            std::string_view value;
        };
        Slot a{context_pos_, kContextSlot.size(), context};
        Slot b{question_pos_, kQuestionSlot.size(), question};
        if (b.pos < a.pos) std::swap(a, b);
        std::string out;
        out.reserve(text_.size() + context.size() + question.size());
        out.append(text_, 0, a.pos);
        out.append(a.value);
        out.append(text_, a.pos + a.len, b.pos - a.pos - a.len);
        out.append(b.value);
        out.append(text_, b.pos + b.len);
        return out;
    }

private:
    std::string text_;
    std::size_t context_pos_ = 0;
    std::size_t question_pos_ = 0;
};

enum class AnswerStatus { answered, refused };

constexpr std::string_view to_string(AnswerStatus s) noexcept {
    return s == AnswerStatus::answered ? "answered" : "refused";
}

struct Citation {
    std::size_t window_index = 0;
    std::string doc_id;
    std::size_t lo = 0;
    std::size_t hi = 0;

    bool operator==(const Citation&) const = default;
};

struct Answer {
    AnswerStatus status = AnswerStatus::refused;
    std::string text;
    std::vector<Citation> citations;
    std::string model_name;
    std::size_t prompt_token_estimate = 0;
    std::vector<ContextWindow> sources;  // windows included in the prompt, tag order

    bool operator==(const Answer&) const = default;
};

struct ChatMessage {
    std::string role;
    std::string content;
};

/// OpenAI-compatible chat-completions client.
struct LlmClient {
    std::string endpoint;  // full URL of the chat completions route
    std::string model_name;
    double temperature = 0.0;
    std::size_t max_output_tokens = 512;
    std::string api_key;
    std::chrono::milliseconds timeout{120000};
    http::Transport transport;

    void validate() const {
        if (!http::is_valid_url(endpoint)) throw Error(ErrorCode::InvalidArgument, "LLM endpoint is not a valid URL");
        if (!(temperature >= 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be >= 0");
    }

    std::string complete(std::span<const ChatMessage> messages) const {
        validate();
        nlohmann::json msgs = nlohmann::json::array();
        for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
        nlohmann::json body = {
            {"model", model_name},
            {"messages", msgs},
            {"temperature", temperature},
            {"max_tokens", max_output_tokens},
        };
        http::Request req{endpoint, body.dump(), {}, timeout};
        http::add_bearer(req, api_key);
        http::Response res;
        try {
            res = (transport ? transport : http::default_transport())(req);
        } catch (const http::TransportError& e) {
            throw Error(ErrorCode::LlmUnreachable, e.what());
        }
        if (res.status >= 500) throw Error(ErrorCode::LlmUnreachable, "LLM endpoint returned HTTP " + std::to_string(res.status));
        if (res.status < 200 || res.status >= 300)
            throw Error(ErrorCode::LlmProtocolError, "LLM endpoint returned HTTP " + std::to_string(res.status));
        try {
            auto j = nlohmann::json::parse(res.body);
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::LlmProtocolError, std::string("malformed chat completion: ") + e.what());
        }
    }

    /// The RAG prompt goes out as the user message; the system message is empty
    /// because the template already carries the persona.
    std::string complete_prompt(const std::string& prompt) const {
        std::vector<ChatMessage> messages{{"system", ""}, {"user", prompt}};
        return complete(messages);
    }
};

/// "[S<i>] <doc_id> <heading path>"
inline std::string source_tag(std::size_t index, const ContextWindow& w) {
    std::string tag = "[S" + std::to_string(index) + "] " + w.doc_id;
    if (!w.heading_path.empty()) tag += " " + text::join(w.heading_path, " > ");
    return tag;
}

struct AssembledPrompt {
    std::string text;
    std::vector<ContextWindow> included;
};

/// Packs windows by descending score, each behind its source tag, and stops
/// at the first one that no longer fits the token budget.
inline AssembledPrompt assemble_prompt(const PromptTemplate& tmpl, std::span<const ContextWindow> windows,
                                       std::string_view question, std::size_t budget_tokens) {
    std::size_t used = tmpl.fixed_tokens() + text::count_tokens(question);
    if (budget_tokens <= used)
        throw Error(ErrorCode::BudgetTooSmall, "budget of " + std::to_string(budget_tokens) +
                                                   " tokens does not exceed template+question (" + std::to_string(used) + ")");
    std::vector<const ContextWindow*> order;
    for (const auto& w : windows) order.push_back(&w);
    std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->score > b->score; });

    AssembledPrompt out;
    std::string context;
    for (const auto* w : order) {
        std::string entry = source_tag(out.included.size(), *w) + "\n" + w->text;
        std::size_t cost = text::count_tokens(entry);
        if (used + cost > budget_tokens) break;
        used += cost;
        if (!context.empty()) context += "\n\n";
        context += entry;
        out.included.push_back(*w);
    }
    out.text = tmpl.render(context, question);
    return out;
}

/// A window is cited iff its "[S<i>]" tag occurs in the answer; with no valid
/// tag at all, every included window is cited.
inline std::vector<Citation> attribute_citations(std::string_view answer_text, std::span<const ContextWindow> included) {
    static const std::regex tag_re(R"(\[S(\d{1,6})\])");
    std::set<std::size_t> cited;
    std::string s(answer_text);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), tag_re); it != std::sregex_iterator(); ++it) {
        auto idx = std::stoul((*it)[1].str());
        if (idx < included.size()) cited.insert(idx);
    }
    if (cited.empty()) {
        for (std::size_t i = 0; i < included.size(); ++i) cited.insert(i);
    }
    std::vector<Citation> out;
    for (auto i : cited) out.push_back({i, included[i].doc_id, included[i].lo, included[i].hi});
    return out;
}

struct AnswerConfig {
    PromptTemplate prompt_template;
    std::size_t budget_tokens = 3000;
};

struct AnswerTrace {
    Answer answer;
    std::string prompt;  // empty when refused before prompting
    retriever::RetrievalResult retrieval;
    bool llm_called = false;
};

/// retrieve -> (rerank) -> expand -> assemble -> chat completion. Empty
/// retrieval refuses without contacting the LLM.
inline AnswerTrace answer_question_traced(const LlmClient& llm, const retriever::RetrievalPipeline& pipeline,
                                          std::string_view question, const AnswerConfig& cfg = {}) {
    if (text::trim(question).empty()) throw Error(ErrorCode::InvalidArgument, "question is empty");
    AnswerTrace trace;
    trace.retrieval = pipeline.retrieve(question);
    trace.answer.model_name = llm.model_name;
    if (trace.retrieval.windows.empty()) {
        trace.answer.status = AnswerStatus::refused;
        trace.answer.text = std::string(kRefusalText);
        return trace;
    }
    auto assembled = assemble_prompt(cfg.prompt_template, trace.retrieval.windows, question, cfg.budget_tokens);
    if (assembled.included.empty()) {
        trace.answer.status = AnswerStatus::refused;
        trace.answer.text = std::string(kRefusalText);
        return trace;
    }
    trace.prompt = std::move(assembled.text);
    trace.llm_called = true;
    trace.answer.text = llm.complete_prompt(trace.prompt);
    trace.answer.status = AnswerStatus::answered;
    trace.answer.citations = attribute_citations(trace.answer.text, assembled.included);
    trace.answer.prompt_token_estimate = text::count_tokens(trace.prompt);
    trace.answer.sources = std::move(assembled.included);
    return trace;
}

inline Answer answer_question(const LlmClient& llm, const retriever::RetrievalPipeline& pipeline,
                              std::string_view question, const AnswerConfig& cfg = {}) {
    return answer_question_traced(llm, pipeline, question, cfg).answer;
}

}  // namespace specqa::ragqa
