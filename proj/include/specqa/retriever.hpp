#pragma once

// Hybrid retrieval: reciprocal rank fusion of the BM25 and cosine legs,
// optional cross-encoder re-ranking, neighbour-expanded context windows and
// recall/MRR evaluation.

#include <algorithm>
#include <chrono>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "specqa/chunker.hpp"
#include "specqa/common.hpp"
#include "specqa/error.hpp"
#include "specqa/http.hpp"
#include "specqa/lexindex.hpp"
#include "specqa/vecindex.hpp"

namespace specqa::retriever {

struct HybridPolicy {
    std::size_t k_semantic = 20;
    std::size_t k_lexical = 20;
    double rrf_k = 60.0;
    std::size_t final_k = 8;
    std::size_t expansion_m = 1;
    bool rerank = false;
    // Semantic hits must score strictly above this cosine to enter fusion.
    double min_semantic_score = 0.0;

    void validate() const {
        if (k_semantic == 0 || k_lexical == 0 || final_k == 0)
            throw Error(ErrorCode::InvalidArgument, "retrieval k values must be >= 1");
        if (!(rrf_k > 0.0)) throw Error(ErrorCode::InvalidArgument, "rrf_k must be > 0");
    }
};

struct ContextWindow {
    std::string doc_id;
    std::size_t lo = 0;
    std::size_t hi = 0;  // inclusive
    std::string text;
    std::vector<std::string> seed_chunk_ids;
    double score = 0.0;
    std::vector<std::string> heading_path;

    bool operator==(const ContextWindow&) const = default;
};

struct RetrievalMetrics {
    double recall_at_k = 0.0;
    double mrr = 0.0;
    std::size_t k = 0;
    std::size_t query_count = 0;
};

struct RerankClient {
    std::string endpoint;
    std::chrono::milliseconds timeout{10000};
    std::string api_key;
    http::Transport transport;
};

/// score(id) = sum over the lists containing id of 1 / (rrf_k + rank), rank
/// 1-based. Contributions are added in ascending rank order so equal rank
/// multisets give bit-identical sums.
inline std::vector<ScoredHit> rrf_fuse(std::span<const std::vector<std::string>> ranked_lists, double rrf_k) {
    if (!(rrf_k > 0.0)) throw Error(ErrorCode::InvalidArgument, "rrf_k must be > 0");
    std::map<std::string, std::vector<std::size_t>> ranks;
    for (const auto& list : ranked_lists) {
        std::unordered_set<std::string_view> seen;
        for (std::size_t i = 0; i < list.size(); ++i) {
            if (!seen.insert(list[i]).second)
                throw Error(ErrorCode::InvalidArgument, "ranked list repeats id " + list[i], list[i]);
            ranks[list[i]].push_back(i + 1);
        }
    }
    std::vector<ScoredHit> out;
    out.reserve(ranks.size());
    for (auto& [id, rs] : ranks) {
        std::sort(rs.begin(), rs.end());
        double s = 0.0;
        for (auto r : rs) s += 1.0 / (rrf_k + static_cast<double>(r));
        out.push_back({id, s, HitSource::fused});
    }
    std::sort(out.begin(), out.end(), ranks_before);
    return out;
}

inline std::vector<std::string> ids_of(std::span<const ScoredHit> hits) {
    std::vector<std::string> ids;
    ids.reserve(hits.size());
    for (const auto& h : hits) ids.push_back(h.chunk_id);
    return ids;
}

inline void check_compatible(const lexindex::LexicalIndex& lex, const vecindex::VectorIndex& vec,
                             const vecindex::EmbeddingProvider& provider) {
    if (vec.provider_fingerprint() != provider.fingerprint())
        throw Error(ErrorCode::IndexMismatch, "vector index was built with " + vec.provider_fingerprint() +
                                                  ", query provider is " + provider.fingerprint());
    if (lex.corpus_fingerprint() != vec.corpus_fingerprint())
        throw Error(ErrorCode::IndexMismatch, "lexical and vector indexes cover different chunk sets");
}

inline bool has_terms(std::string_view query) { return text::count_tokens(query) > 0; }

inline std::vector<ScoredHit> semantic_leg(const vecindex::VectorIndex& vec, const vecindex::EmbeddingProvider& provider,
                                           std::string_view query, std::size_t k, double min_score) {
    if (vec.size() == 0) return {};
    auto q = vecindex::embed_one(provider, std::string(query));
    auto hits = vec.search(q, k);
    std::erase_if(hits, [&](const ScoredHit& h) { return !(h.score > min_score); });
    return hits;
}

/// Fuses the top k_semantic cosine hits with the top k_lexical BM25 hits and
/// keeps final_k. A query without terms retrieves nothing.
inline std::vector<ScoredHit> hybrid_search(const lexindex::LexicalIndex& lex, const vecindex::VectorIndex& vec,
                                            const vecindex::EmbeddingProvider& provider, std::string_view query,
                                            const HybridPolicy& policy) {
    policy.validate();
    check_compatible(lex, vec, provider);
    if (!has_terms(query)) return {};
    auto semantic = semantic_leg(vec, provider, query, policy.k_semantic, policy.min_semantic_score);
    auto lexical = lex.search(query, policy.k_lexical);
    std::vector<std::vector<std::string>> lists{ids_of(semantic), ids_of(lexical)};
    auto fused = rrf_fuse(lists, policy.rrf_k);
    if (fused.size() > policy.final_k) fused.resize(policy.final_k);
    return fused;
}

/// Scores (query, passage) pairs on the rerank endpoint and reorders by that
/// score, ties keeping the incoming order. Any transport or protocol failure
/// raises RerankUnavailable; falling back is the caller's decision.
inline std::vector<ScoredHit> rerank(const RerankClient& client, std::string_view query,
                                     std::span<const ScoredHit> hits,
                                     const std::unordered_map<std::string, std::string>& texts) {
    if (hits.empty()) throw Error(ErrorCode::InvalidArgument, "rerank needs at least one hit");
    if (hits.size() == 1) return {{hits[0].chunk_id, hits[0].score, HitSource::reranked}};  // nothing to reorder
    nlohmann::json passages = nlohmann::json::array();
    for (const auto& h : hits) {
        auto it = texts.find(h.chunk_id);
        if (it == texts.end()) throw Error(ErrorCode::UnknownChunk, "no text for " + h.chunk_id, h.chunk_id);
        passages.push_back(it->second);
    }
    nlohmann::json body = {{"query", query}, {"passages", passages}};
    http::Request req{client.endpoint, body.dump(), {}, client.timeout};
    http::add_bearer(req, client.api_key);
    http::Response res;
    try {
        res = (client.transport ? client.transport : http::default_transport())(req);
    } catch (const http::TransportError& e) {
        throw Error(ErrorCode::RerankUnavailable, e.what());
    }
    if (res.status < 200 || res.status >= 300)
        throw Error(ErrorCode::RerankUnavailable, "rerank endpoint returned HTTP " + std::to_string(res.status));
    std::vector<double> scores;
    try {
        auto j = nlohmann::json::parse(res.body);
        const auto& arr = j.is_object() ? j.at("scores") : j;
        scores = arr.get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::RerankUnavailable, std::string("malformed rerank response: ") + e.what());
    }
    if (scores.size() != hits.size())
        throw Error(ErrorCode::RerankUnavailable, "rerank endpoint returned " + std::to_string(scores.size()) +
                                                      " scores for " + std::to_string(hits.size()) + " passages");
    std::vector<ScoredHit> out;
    out.reserve(hits.size());
    for (std::size_t i = 0; i < hits.size(); ++i) {
        if (!std::isfinite(scores[i])) throw Error(ErrorCode::RerankUnavailable, "non-finite rerank score");
        out.push_back({hits[i].chunk_id, scores[i], HitSource::reranked});
    }
    std::stable_sort(out.begin(), out.end(), [](const ScoredHit& a, const ScoredHit& b) { return a.score > b.score; });
    return out;
}

inline std::vector<ScoredHit> rerank(const RerankClient& client, std::string_view query,
                                     std::span<const ScoredHit> hits, const chunker::ChunkStore& store) {
    std::unordered_map<std::string, std::string> texts;
    for (const auto& h : hits) texts.emplace(h.chunk_id, store.at(h.chunk_id).text);
    return rerank(client, query, hits, texts);
}

/// Text of chunks lo..hi with each later chunk's repeated overlap removed.
inline std::string window_text(const std::vector<const chunker::Chunk*>& doc_chunks, std::size_t lo, std::size_t hi) {
    std::string out = doc_chunks[lo]->text;
    for (std::size_t o = lo + 1; o <= hi; ++o) {
        const auto& c = *doc_chunks[o];
        bool space_joined = c.overlap_chars > 0 && c.text[c.overlap_chars - 1] == ' ';
        out += space_joined ? " " : "\n\n";
        out += c.body();
    }
    return out;
}

/// Expands every hit to ordinals [o-m, o+m] clipped to its document, merges
/// overlapping or adjacent ranges of one document (max score, union of
/// seeds) and orders windows by descending score.
inline std::vector<ContextWindow> expand_context(const chunker::ChunkStore& store, std::span<const ScoredHit> hits,
                                                 std::size_t m) {
    struct Range {
        std::size_t lo, hi;
        double score;
        std::vector<std::string> seeds;
    };
    std::map<std::string, std::vector<Range>> by_doc;
    for (const auto& h : hits) {
        const auto& c = store.at(h.chunk_id);
        std::size_t n = store.document_size(c.doc_id);
        std::size_t lo = c.ordinal >= m ? c.ordinal - m : 0;
        std::size_t hi = std::min(c.ordinal + m, n - 1);
        by_doc[c.doc_id].push_back({lo, hi, h.score, {h.chunk_id}});
    }
    std::vector<ContextWindow> out;
    for (auto& [doc_id, ranges] : by_doc) {
        std::sort(ranges.begin(), ranges.end(), [](const Range& a, const Range& b) { return a.lo < b.lo; });
        std::vector<Range> merged;
        for (auto& r : ranges) {
            if (!merged.empty() && r.lo <= merged.back().hi + 1) {
                auto& cur = merged.back();
                cur.hi = std::max(cur.hi, r.hi);
                cur.score = std::max(cur.score, r.score);
                for (auto& s : r.seeds) {
                    if (std::find(cur.seeds.begin(), cur.seeds.end(), s) == cur.seeds.end()) cur.seeds.push_back(s);
                }
            } else {
                merged.push_back(std::move(r));
            }
        }
        auto doc_chunks = store.document(doc_id);
        for (auto& r : merged) {
            ContextWindow w;
            w.doc_id = doc_id;
            w.lo = r.lo;
            w.hi = r.hi;
            w.text = window_text(doc_chunks, r.lo, r.hi);
            std::sort(r.seeds.begin(), r.seeds.end(), [&](const std::string& a, const std::string& b) {
                return store.at(a).ordinal < store.at(b).ordinal;
            });
            w.seed_chunk_ids = std::move(r.seeds);
            w.score = r.score;
            w.heading_path = doc_chunks[r.lo]->heading_path;
            out.push_back(std::move(w));
        }
    }
    std::sort(out.begin(), out.end(), [](const ContextWindow& a, const ContextWindow& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.doc_id != b.doc_id) return a.doc_id < b.doc_id;
        return a.lo < b.lo;
    });
    return out;
}

enum class RetrievalMode { hybrid, lexical, semantic };

constexpr std::string_view to_string(RetrievalMode m) noexcept {
    switch (m) {
        case RetrievalMode::hybrid: return "hybrid";
        case RetrievalMode::lexical: return "lexical";
        case RetrievalMode::semantic: return "semantic";
    }
    return "hybrid";
}

struct RetrievalResult {
    std::vector<ScoredHit> hits;
    std::vector<ContextWindow> windows;
    bool reranked = false;
    // Set when reranking was requested but the scorer failed; hits then keep fused order.
    std::optional<std::string> rerank_fallback;
};

/// The search side of the question-answering flow, bound to one immutable
/// index generation.
struct RetrievalPipeline {
    const chunker::ChunkStore& chunks;
    const lexindex::LexicalIndex& lexical;
    const vecindex::VectorIndex& vectors;
    vecindex::EmbeddingProvider provider;
    HybridPolicy policy;
    std::optional<RerankClient> reranker;
    RetrievalMode mode = RetrievalMode::hybrid;

    /// Ranked seeds: fused (or single-leg) top final_k, then reranked when enabled.
    RetrievalResult rank(std::string_view query) const {
        policy.validate();
        RetrievalResult r;
        switch (mode) {
            case RetrievalMode::hybrid:
                r.hits = hybrid_search(lexical, vectors, provider, query, policy);
                break;
            case RetrievalMode::lexical:
                if (has_terms(query)) r.hits = lexical.search(query, policy.final_k);
                break;
            case RetrievalMode::semantic:
                check_compatible(lexical, vectors, provider);
                if (has_terms(query))
                    r.hits = semantic_leg(vectors, provider, query, policy.final_k, policy.min_semantic_score);
                break;
        }
        if (policy.rerank && !r.hits.empty()) {
            if (!reranker) throw Error(ErrorCode::InvalidArgument, "reranking enabled without a rerank client");
            try {
                r.hits = rerank(*reranker, query, r.hits, chunks);
                r.reranked = true;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::RerankUnavailable) throw;
                r.rerank_fallback = e.what();
            }
        }
        return r;
    }

    RetrievalResult retrieve(std::string_view query) const {
        auto r = rank(query);
        r.windows = expand_context(chunks, r.hits, policy.expansion_m);
        return r;
    }
};

struct LabeledQuery {
    std::string query;
    std::string expected_chunk_id;
};

/// recall@final_k and MRR of the expected chunk among the ranked seeds.
inline RetrievalMetrics evaluate_retrieval(const RetrievalPipeline& pipeline, std::span<const LabeledQuery> queryset) {
    if (queryset.empty()) throw Error(ErrorCode::InvalidArgument, "queryset is empty");
    for (const auto& q : queryset) (void)pipeline.chunks.at(q.expected_chunk_id);
    RetrievalMetrics m;
    m.k = pipeline.policy.final_k;
    m.query_count = queryset.size();
    std::size_t found = 0;
    double rr = 0.0;
    for (const auto& q : queryset) {
        auto hits = pipeline.rank(q.query).hits;
        std::size_t limit = std::min(hits.size(), m.k);
        for (std::size_t i = 0; i < limit; ++i) {
            if (hits[i].chunk_id == q.expected_chunk_id) {
                ++found;
                rr += 1.0 / static_cast<double>(i + 1);
                break;
            }
        }
    }
    m.recall_at_k = static_cast<double>(found) / static_cast<double>(queryset.size());
    m.mrr = rr / static_cast<double>(queryset.size());
    return m;
}

}  // namespace specqa::retriever
