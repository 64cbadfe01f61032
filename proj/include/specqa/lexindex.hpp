#pragma once

// Okapi BM25 over chunk terms. The keyword leg of hybrid retrieval.

#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "specqa/binio.hpp"
#include "specqa/chunker.hpp"
#include "specqa/common.hpp"
#include "specqa/error.hpp"
#include "specqa/text.hpp"

namespace specqa::lexindex {

using specqa::HitSource;
using specqa::ScoredHit;

/// Lowercased alphanumeric runs. No stemming, no stopwords.
inline std::vector<std::string> normalize_terms(std::string_view s) {
    std::vector<std::string> out;
    for (auto span : text::token_spans(s)) out.push_back(text::lowercase(s.substr(span.begin, span.end - span.begin)));
    return out;
}

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;

    void validate() const {
        if (!(k1 >= 0.0) || !std::isfinite(k1)) throw Error(ErrorCode::InvalidArgument, "k1 must be >= 0");
        if (!(b >= 0.0 && b <= 1.0)) throw Error(ErrorCode::InvalidArgument, "b must be in [0, 1]");
    }

    bool operator==(const Bm25Params&) const = default;
};

/// IDF with +1 inside the log, so it is positive for every document frequency.
inline double bm25_idf(double corpus_size, double df) {
    return std::log(1.0 + (corpus_size - df + 0.5) / (df + 0.5));
}

inline double bm25_term_weight(double tf, double doc_length, double avg_doc_length, const Bm25Params& p) {
    double norm = avg_doc_length > 0.0 ? doc_length / avg_doc_length : 0.0;
    return tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * norm));
}

class LexicalIndex {
public:
    struct Posting {
        std::uint32_t doc;
        std::uint32_t tf;
        bool operator==(const Posting&) const = default;
    };

    LexicalIndex() = default;

    static LexicalIndex build(std::span<const chunker::Chunk> chunks, const Bm25Params& params = {}) {
        params.validate();
        if (chunks.empty()) throw Error(ErrorCode::EmptyCorpus, "cannot index an empty corpus");
        LexicalIndex idx;
        idx.params_ = params;
        std::unordered_set<std::string> seen;
        double total = 0.0;
        for (const auto& c : chunks) {
            if (!seen.insert(c.chunk_id).second)
                throw Error(ErrorCode::DuplicateChunkId, "duplicate chunk id " + c.chunk_id, c.chunk_id);
            auto doc = static_cast<std::uint32_t>(idx.ids_.size());
            auto terms = normalize_terms(c.text);
            std::map<std::string, std::uint32_t> tf;
            for (auto& t : terms) ++tf[std::move(t)];
            for (auto& [term, n] : tf) idx.postings_[term].push_back({doc, n});
            idx.ids_.push_back(c.chunk_id);
            idx.lengths_.push_back(static_cast<std::uint32_t>(terms.size()));
            total += static_cast<double>(terms.size());
        }
        idx.avg_doc_length_ = total / static_cast<double>(idx.ids_.size());
        idx.finish();
        return idx;
    }

    /// Okapi BM25 summed over the query's terms (repeated terms count again).
    /// Chunks matching no term are omitted; ties break on chunk_id.
    std::vector<ScoredHit> search(std::string_view query, std::size_t k) const {
        if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
        std::vector<double> scores(ids_.size(), 0.0);
        std::vector<char> matched(ids_.size(), 0);
        const double n = static_cast<double>(ids_.size());
        for (const auto& term : normalize_terms(query)) {
            auto it = postings_.find(term);
            if (it == postings_.end()) continue;
            double idf = bm25_idf(n, static_cast<double>(it->second.size()));
            for (const auto& p : it->second) {
                scores[p.doc] += idf * bm25_term_weight(p.tf, lengths_[p.doc], avg_doc_length_, params_);
                matched[p.doc] = 1;
            }
        }
        std::vector<ScoredHit> hits;
        for (std::size_t d = 0; d < ids_.size(); ++d) {
            if (matched[d]) hits.push_back({ids_[d], scores[d], HitSource::lexical});
        }
        rank_and_truncate(hits, k);
        return hits;
    }

    /// (chunk_id, term frequency) pairs for one term, in indexing order.
    std::vector<std::pair<std::string, std::uint32_t>> postings(std::string_view term) const {
        std::vector<std::pair<std::string, std::uint32_t>> out;
        auto it = postings_.find(std::string(term));
        if (it == postings_.end()) return out;
        for (const auto& p : it->second) out.emplace_back(ids_[p.doc], p.tf);
        return out;
    }

    std::size_t document_frequency(std::string_view term) const {
        auto it = postings_.find(std::string(term));
        return it == postings_.end() ? 0 : it->second.size();
    }

    std::optional<std::uint32_t> doc_length(std::string_view chunk_id) const {
        auto it = by_id_.find(std::string(chunk_id));
        if (it == by_id_.end()) return std::nullopt;
        return lengths_[it->second];
    }

    std::size_t corpus_size() const noexcept { return ids_.size(); }
    std::size_t vocabulary_size() const noexcept { return postings_.size(); }
    double avg_doc_length() const noexcept { return avg_doc_length_; }
    const Bm25Params& params() const noexcept { return params_; }
    const std::vector<std::string>& chunk_ids() const noexcept { return ids_; }
    const std::string& corpus_fingerprint() const noexcept { return fingerprint_; }

    static constexpr std::uint8_t kSnapshotVersion = 1;

    /// Snapshot: magic "SQLX", version byte, then params, lengths and postings sections.
    void save(std::ostream& os) const {
        binio::write_magic(os, "SQLX", kSnapshotVersion);
        binio::write_le<double>(os, params_.k1);
        binio::write_le<double>(os, params_.b);
        binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ids_.size()));
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            binio::write_string(os, ids_[i]);
            binio::write_le<std::uint32_t>(os, lengths_[i]);
        }
        binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(postings_.size()));
        for (const auto& [term, list] : postings_) {
            binio::write_string(os, term);
            binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(list.size()));
            for (const auto& p : list) {
                binio::write_le<std::uint32_t>(os, p.doc);
                binio::write_le<std::uint32_t>(os, p.tf);
            }
        }
        if (!os) throw Error(ErrorCode::IoError, "failed writing lexical snapshot");
    }

    static LexicalIndex load(std::istream& is) {
        auto version = binio::read_magic(is, "SQLX");
        if (version != kSnapshotVersion)
            throw Error(ErrorCode::SnapshotError, "unsupported lexical snapshot version " + std::to_string(version));
        LexicalIndex idx;
        idx.params_.k1 = binio::read_le<double>(is);
        idx.params_.b = binio::read_le<double>(is);
        idx.params_.validate();
        auto n = binio::read_le<std::uint32_t>(is);
        double total = 0.0;
        for (std::uint32_t i = 0; i < n; ++i) {
            idx.ids_.push_back(binio::read_string(is));
            idx.lengths_.push_back(binio::read_le<std::uint32_t>(is));
            total += idx.lengths_.back();
        }
        if (n == 0) throw Error(ErrorCode::SnapshotError, "lexical snapshot has no chunks");
        idx.avg_doc_length_ = total / static_cast<double>(n);
        auto terms = binio::read_le<std::uint32_t>(is);
        for (std::uint32_t t = 0; t < terms; ++t) {
            auto term = binio::read_string(is);
            auto count = binio::read_le<std::uint32_t>(is);
            auto& list = idx.postings_[term];
            list.reserve(count);
            for (std::uint32_t i = 0; i < count; ++i) {
                auto doc = binio::read_le<std::uint32_t>(is);
                auto tf = binio::read_le<std::uint32_t>(is);
                if (doc >= n) throw Error(ErrorCode::SnapshotError, "posting references unknown chunk");
                list.push_back({doc, tf});
            }
        }
        idx.finish();
        return idx;
    }

    bool operator==(const LexicalIndex& o) const {
        return ids_ == o.ids_ && lengths_ == o.lengths_ && postings_ == o.postings_ && params_ == o.params_;
    }

private:
    void finish() {
        by_id_.clear();
        for (std::size_t i = 0; i < ids_.size(); ++i) by_id_.emplace(ids_[i], i);
        fingerprint_ = specqa::corpus_fingerprint(ids_);
    }

    std::vector<std::string> ids_;
    std::vector<std::uint32_t> lengths_;
    std::map<std::string, std::vector<Posting>, std::less<>> postings_;
    std::unordered_map<std::string, std::size_t> by_id_;
    double avg_doc_length_ = 0.0;
    Bm25Params params_;
    std::string fingerprint_;
};

inline LexicalIndex build_lexical_index(std::span<const chunker::Chunk> chunks, const Bm25Params& params = {}) {
    return LexicalIndex::build(chunks, params);
}

inline std::vector<ScoredHit> lexical_search(const LexicalIndex& index, std::string_view query, std::size_t k) {
    return index.search(query, k);
}

}  // namespace specqa::lexindex
