#pragma once

// Token-budgeted chunking that keeps tables whole and links neighbours.

#include <algorithm>
#include <cstddef>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "specqa/error.hpp"
#include "specqa/ingest.hpp"
#include "specqa/text.hpp"

namespace specqa::chunker {

using text::count_tokens;

struct ChunkPolicy {
    std::size_t max_tokens = 300;
    std::size_t overlap_tokens = 50;
    std::size_t min_tokens = 20;

    void validate() const {
        if (overlap_tokens >= max_tokens)
            throw Error(ErrorCode::InvalidArgument, "overlap_tokens must be < max_tokens");
        if (min_tokens == 0 || min_tokens > max_tokens)
            throw Error(ErrorCode::InvalidArgument, "min_tokens must be in (0, max_tokens]");
    }

    bool operator==(const ChunkPolicy&) const = default;
};

struct Chunk {
    std::string chunk_id;  // "<doc_id>#<ordinal>"
    std::string doc_id;
    std::size_t ordinal = 0;
    std::string text;
    std::size_t token_count = 0;
    std::vector<std::string> heading_path;
    bool atomic_oversize = false;
    ingest::Metadata metadata;
    // Leading bytes of `text` repeated from the previous chunk, separator included.
    std::size_t overlap_chars = 0;
    std::size_t first_block = 0;
    std::size_t last_block = 0;

    std::string_view body() const noexcept { return std::string_view(text).substr(overlap_chars); }

    bool operator==(const Chunk&) const = default;
};

inline std::string make_chunk_id(std::string_view doc_id, std::size_t ordinal) {
    return std::string(doc_id) + "#" + std::to_string(ordinal);
}

namespace detail {

struct Piece {
    std::string text;
    std::size_t tokens = 0;
    ingest::BlockKind kind = ingest::BlockKind::paragraph;
    std::size_t block_index = 0;
    const std::vector<std::string>* heading_path = nullptr;
    bool continues_block = false;  // a later sentence group of a split paragraph
    bool oversize_table = false;
};

/// Sentence boundary: '.', '?' or '!' followed by whitespace.
inline std::vector<std::string> split_sentences(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        if ((s[i] == '.' || s[i] == '?' || s[i] == '!') && text::is_space(s[i + 1])) {
            auto sentence = text::trim(s.substr(start, i + 1 - start));
            if (!sentence.empty()) out.push_back(std::move(sentence));
            start = i + 1;
        }
    }
    auto tail = text::trim(s.substr(start));
    if (!tail.empty()) out.push_back(std::move(tail));
    return out;
}

/// Splits text with more than `max` tokens into parts of at most `max` tokens,
/// breaking at whitespace. A single whitespace-free word above budget is cut
/// between alphanumeric runs, never inside one.
inline std::vector<std::string> split_words(std::string_view s, std::size_t max) {
    std::vector<std::string> out;
    std::string current;
    std::size_t current_tokens = 0;
    auto flush = [&] {
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
        current_tokens = 0;
    };
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && text::is_space(s[i])) ++i;
        std::size_t j = i;
        while (j < s.size() && !text::is_space(s[j])) ++j;
        if (j == i) break;
        std::string_view word = s.substr(i, j - i);
        i = j;
        std::size_t wt = count_tokens(word);
        if (wt > max) {
            flush();
            auto spans = text::token_spans(word);
            std::size_t from = 0;
            for (std::size_t k = max; k < spans.size(); k += max) {
                out.emplace_back(word.substr(from, spans[k].begin - from));
                from = spans[k].begin;
            }
            out.emplace_back(word.substr(from));
            continue;
        }
        if (current_tokens + wt > max) flush();
        if (!current.empty()) current.push_back(' ');
        current.append(word);
        current_tokens += wt;
    }
    flush();
    return out;
}

inline std::vector<Piece> make_pieces(const ingest::Document& doc, std::size_t max) {
    std::vector<Piece> pieces;
    for (const auto& b : doc.blocks) {
        Piece base;
        base.kind = b.kind;
        base.block_index = b.block_index;
        base.heading_path = &b.heading_path;
        std::size_t tokens = count_tokens(b.text);
        if (tokens <= max) {
            base.text = b.text;
            base.tokens = tokens;
            pieces.push_back(std::move(base));
            continue;
        }
        if (b.kind == ingest::BlockKind::table) {
            base.text = b.text;
            base.tokens = tokens;
            base.oversize_table = true;
            pieces.push_back(std::move(base));
            continue;
        }
        bool first = true;
        for (auto& sentence : split_sentences(b.text)) {
            std::vector<std::string> parts;
            if (count_tokens(sentence) > max) parts = split_words(sentence, max);
            else parts.push_back(std::move(sentence));
            for (auto& part : parts) {
                Piece p = base;
                p.tokens = count_tokens(part);
                p.text = std::move(part);
                p.continues_block = !first;
                first = false;
                pieces.push_back(std::move(p));
            }
        }
    }
    return pieces;
}

class Packer {
public:
    Packer(const ingest::Document& doc, const ChunkPolicy& policy) : doc_(doc), policy_(policy) {}

    std::vector<Chunk> run(std::vector<Piece> pieces) {
        for (auto& piece : pieces) add(std::move(piece));
        if (!pending_.empty()) emit();
        return std::move(out_);
    }

private:
    void add(Piece piece) {
        if (piece.oversize_table) {
            bool merge = !pending_.empty() && body_tokens() < policy_.min_tokens;
            if (!merge && !pending_.empty()) emit();
            if (pending_.empty()) overlap_.clear();
            pending_.push_back(std::move(piece));
            emit();
            return;
        }
        if (!pending_.empty() && total_tokens() + piece.tokens > policy_.max_tokens) {
            std::vector<Piece> carried = take_trailing_headings(piece.tokens);
            emit();
            start_next(carried, piece);
            for (auto& h : carried) pending_.push_back(std::move(h));
        } else if (pending_.empty() && !out_.empty()) {
            start_next({}, piece);
        }
        pending_.push_back(std::move(piece));
    }

    std::size_t body_tokens() const {
        std::size_t n = 0;
        for (const auto& p : pending_) n += p.tokens;
        return n;
    }

    std::size_t total_tokens() const { return body_tokens() + count_tokens(overlap_); }

    /// Headings at the tail of the pending chunk move forward with the content
    /// they introduce, when something else remains behind and they fit.
    std::vector<Piece> take_trailing_headings(std::size_t next_tokens) {
        std::size_t k = pending_.size();
        std::size_t moved_tokens = 0;
        while (k > 0 && pending_[k - 1].kind == ingest::BlockKind::heading) {
            moved_tokens += pending_[k - 1].tokens;
            --k;
        }
        if (k == 0 || k == pending_.size() || moved_tokens + next_tokens > policy_.max_tokens) return {};
        std::vector<Piece> moved(std::make_move_iterator(pending_.begin() + static_cast<std::ptrdiff_t>(k)),
                                 std::make_move_iterator(pending_.end()));
        pending_.resize(k);
        return moved;
    }

    /// Seeds the overlap for the chunk that starts after the last emitted one:
    /// the trailing tokens of its non-table tail, clipped to the budget.
    void start_next(const std::vector<Piece>& carried, const Piece& next) {
        overlap_.clear();
        overlap_continues_ = false;
        if (out_.empty() || policy_.overlap_tokens == 0 || last_tail_.empty()) return;
        std::size_t reserved = next.tokens;
        for (const auto& c : carried) reserved += c.tokens;
        if (reserved >= policy_.max_tokens) return;
        std::size_t budget = std::min(policy_.overlap_tokens, policy_.max_tokens - reserved);
        auto spans = text::token_spans(last_tail_);
        std::size_t n = std::min(budget, spans.size());
        if (n == 0) return;
        overlap_ = last_tail_.substr(spans[spans.size() - n].begin);
        overlap_continues_ = carried.empty() && next.continues_block && next.block_index == last_block_;
    }

    void emit() {
        Chunk c;
        c.doc_id = doc_.doc_id;
        c.ordinal = out_.size();
        c.chunk_id = make_chunk_id(doc_.doc_id, c.ordinal);
        c.metadata = doc_.metadata;
        c.heading_path = *pending_.front().heading_path;
        c.first_block = pending_.front().block_index;
        c.last_block = pending_.back().block_index;
        if (!overlap_.empty()) {
            c.text = overlap_;
            c.text += overlap_continues_ ? " " : "\n\n";
            c.overlap_chars = c.text.size();
        }
        std::size_t tail_begin = c.text.size();
        bool has_table = false;
        for (std::size_t i = 0; i < pending_.size(); ++i) {
            const auto& p = pending_[i];
            if (i > 0) c.text += p.continues_block ? " " : "\n\n";
            if (p.kind == ingest::BlockKind::table) {
                has_table = true;
                c.text += p.text;
                tail_begin = c.text.size();
                c.atomic_oversize = c.atomic_oversize || p.oversize_table;
            } else {
                c.text += p.text;
            }
        }
        c.token_count = count_tokens(c.text);
        bool ends_with_table = pending_.back().kind == ingest::BlockKind::table;
        if (ends_with_table) {
            last_tail_.clear();
        } else {
            // Without a table the whole text, prior overlap included, is eligible.
            last_tail_ = has_table ? c.text.substr(tail_begin) : c.text;
        }
        last_block_ = pending_.back().block_index;
        out_.push_back(std::move(c));
        pending_.clear();
        overlap_.clear();
    }

    const ingest::Document& doc_;
    const ChunkPolicy& policy_;
    std::vector<Chunk> out_;
    std::vector<Piece> pending_;
    std::string overlap_;
    bool overlap_continues_ = false;
    std::string last_tail_;
    std::size_t last_block_ = 0;
};

}  // namespace detail

/// Greedy in-order packing of blocks into chunks of at most max_tokens.
/// Paragraphs above budget are split at sentence boundaries; tables above
/// budget are emitted whole with atomic_oversize set. Consecutive chunks
/// share up to overlap_tokens of trailing non-table text, and a pending chunk
/// smaller than min_tokens is folded into a following oversize table.
inline std::vector<Chunk> chunk_document(const ingest::Document& doc, const ChunkPolicy& policy = {}) {
    policy.validate();
    if (doc.blocks.empty()) throw Error(ErrorCode::EmptyDocument, "document has no blocks: " + doc.doc_id);
    return detail::Packer(doc, policy).run(detail::make_pieces(doc, policy.max_tokens));
}

/// Read-only chunk collection indexed by id and by document.
class ChunkStore {
public:
    ChunkStore() = default;
    explicit ChunkStore(std::vector<Chunk> chunks) : chunks_(std::move(chunks)) { reindex(); }

    std::span<const Chunk> all() const noexcept { return chunks_; }
    std::size_t size() const noexcept { return chunks_.size(); }
    bool empty() const noexcept { return chunks_.empty(); }

    const Chunk* find(std::string_view id) const {
        auto it = by_id_.find(std::string(id));
        return it == by_id_.end() ? nullptr : &chunks_[it->second];
    }

    const Chunk& at(std::string_view id) const {
        if (const auto* c = find(id)) return *c;
        throw Error(ErrorCode::UnknownChunk, "unknown chunk id " + std::string(id), std::string(id));
    }

    /// Chunks of one document in ordinal order.
    std::vector<const Chunk*> document(std::string_view doc_id) const {
        std::vector<const Chunk*> out;
        auto it = by_doc_.find(std::string(doc_id));
        if (it == by_doc_.end()) return out;
        for (auto idx : it->second) out.push_back(&chunks_[idx]);
        return out;
    }

    std::size_t document_size(std::string_view doc_id) const {
        auto it = by_doc_.find(std::string(doc_id));
        return it == by_doc_.end() ? 0 : it->second.size();
    }

private:
    void reindex() {
        for (std::size_t i = 0; i < chunks_.size(); ++i) {
            if (!by_id_.emplace(chunks_[i].chunk_id, i).second)
                throw Error(ErrorCode::DuplicateChunkId, "duplicate chunk id " + chunks_[i].chunk_id);
            by_doc_[chunks_[i].doc_id].push_back(i);
        }
        for (auto& [doc, idx] : by_doc_) {
            std::sort(idx.begin(), idx.end(),
                      [&](std::size_t a, std::size_t b) { return chunks_[a].ordinal < chunks_[b].ordinal; });
        }
    }

    std::vector<Chunk> chunks_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::map<std::string, std::vector<std::size_t>> by_doc_;
};

/// Chunks of the same document with ordinal in [o-m, o+m], in ordinal order.
inline std::vector<Chunk> neighbors(const ChunkStore& store, std::string_view chunk_id, std::size_t m) {
    const Chunk& seed = store.at(chunk_id);
    std::vector<Chunk> out;
    std::size_t lo = seed.ordinal >= m ? seed.ordinal - m : 0;
    std::size_t hi = seed.ordinal + m;
    for (const Chunk* c : store.document(seed.doc_id)) {
        if (c->ordinal >= lo && c->ordinal <= hi) out.push_back(*c);
    }
    return out;
}

inline std::vector<Chunk> neighbors(std::span<const Chunk> corpus, std::string_view chunk_id, std::size_t m) {
    return neighbors(ChunkStore(std::vector<Chunk>(corpus.begin(), corpus.end())), chunk_id, m);
}

inline void to_json(nlohmann::json& j, const Chunk& c) {
    j = nlohmann::json{
        {"chunk_id", c.chunk_id},
        {"doc_id", c.doc_id},
        {"ordinal", c.ordinal},
        {"text", c.text},
        {"token_count", c.token_count},
        {"heading_path", c.heading_path},
        {"atomic_oversize", c.atomic_oversize},
        {"metadata", c.metadata},
        {"overlap_chars", c.overlap_chars},
        {"first_block", c.first_block},
        {"last_block", c.last_block},
    };
}

inline void from_json(const nlohmann::json& j, Chunk& c) {
    j.at("chunk_id").get_to(c.chunk_id);
    j.at("doc_id").get_to(c.doc_id);
    j.at("ordinal").get_to(c.ordinal);
    j.at("text").get_to(c.text);
    j.at("token_count").get_to(c.token_count);
    j.at("heading_path").get_to(c.heading_path);
    j.at("atomic_oversize").get_to(c.atomic_oversize);
    j.at("metadata").get_to(c.metadata);
    c.overlap_chars = j.value("overlap_chars", std::size_t{0});
    c.first_block = j.value("first_block", std::size_t{0});
    c.last_block = j.value("last_block", std::size_t{0});
}

/// One JSON record per line.
inline void write_chunks_jsonl(std::ostream& os, std::span<const Chunk> chunks) {
    for (const auto& c : chunks) os << nlohmann::json(c).dump() << '\n';
}

inline std::vector<Chunk> read_chunks_jsonl(std::istream& is) {
    std::vector<Chunk> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(nlohmann::json::parse(line).get<Chunk>());
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::SnapshotError, "bad chunk record at line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace specqa::chunker
