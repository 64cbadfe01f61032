#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "specqa/text.hpp"

namespace specqa {

enum class HitSource { lexical, semantic, fused, reranked };

constexpr std::string_view to_string(HitSource s) noexcept {
    switch (s) {
        case HitSource::lexical: return "lexical";
        case HitSource::semantic: return "semantic";
        case HitSource::fused: return "fused";
        case HitSource::reranked: return "reranked";
    }
    return "fused";
}

struct ScoredHit {
    std::string chunk_id;
    double score = 0.0;
    HitSource source = HitSource::fused;

    bool operator==(const ScoredHit&) const = default;
};

/// Score descending, chunk_id ascending.
inline bool ranks_before(const ScoredHit& a, const ScoredHit& b) noexcept {
    if (a.score != b.score) return a.score > b.score;
    return a.chunk_id < b.chunk_id;
}

inline void rank_and_truncate(std::vector<ScoredHit>& hits, std::size_t k) {
    if (hits.size() > k) {
        std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), ranks_before);
        hits.resize(k);
    } else {
        std::sort(hits.begin(), hits.end(), ranks_before);
    }
}

/// Order-independent fingerprint of a chunk-id set.
inline std::string corpus_fingerprint(std::vector<std::string> ids) {
    std::sort(ids.begin(), ids.end());
    std::uint64_t h = text::fnv1a64("");
    for (const auto& id : ids) {
        h = text::fnv1a64(id, h);
        h = text::fnv1a64("\n", h);
    }
    return text::hex64(h);
}

}  // namespace specqa
