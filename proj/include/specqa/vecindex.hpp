#pragma once

// Embedding providers and an exact (flat) cosine index: the semantic leg.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "specqa/binio.hpp"
#include "specqa/chunker.hpp"
#include "specqa/common.hpp"
#include "specqa/error.hpp"
#include "specqa/http.hpp"
#include "specqa/lexindex.hpp"

namespace specqa::vecindex {

using Vector = std::vector<float>;

enum class ProviderKind { remote, hashed };

constexpr std::string_view to_string(ProviderKind k) noexcept { return k == ProviderKind::remote ? "remote" : "hashed"; }

inline constexpr std::size_t kMinDim = 8;
inline constexpr std::string_view kHashedModel = "fnv1a-signed-v1";

struct EmbeddingProvider {
    ProviderKind kind = ProviderKind::hashed;
    std::string endpoint;    // remote only, full URL of the embeddings route
    std::string model_name;  // empty selects kHashedModel for the hashed kind
    std::size_t dim = 256;
    std::string api_key;
    std::chrono::milliseconds timeout{30000};
    std::size_t batch_size = 64;
    http::Transport transport;  // empty means http::default_transport()

    static EmbeddingProvider hashed(std::size_t dim = 256) {
        EmbeddingProvider p;
        p.dim = dim;
        return p;
    }

    static EmbeddingProvider remote(std::string endpoint, std::string model, std::size_t dim) {
        EmbeddingProvider p;
        p.kind = ProviderKind::remote;
        p.endpoint = std::move(endpoint);
        p.model_name = std::move(model);
        p.dim = dim;
        return p;
    }

    std::string effective_model() const {
        return model_name.empty() && kind == ProviderKind::hashed ? std::string(kHashedModel) : model_name;
    }

    /// kind + model + dim. Indexes remember it so embedding spaces never mix.
    std::string fingerprint() const {
        return std::string(to_string(kind)) + "/" + effective_model() + "/" + std::to_string(dim);
    }

    void validate() const {
        if (dim < kMinDim) throw Error(ErrorCode::InvalidArgument, "embedding dim must be >= 8");
        if (kind == ProviderKind::remote && !http::is_valid_url(endpoint))
            throw Error(ErrorCode::InvalidArgument, "remote embedding provider needs a valid endpoint URL");
    }
};

inline double l2_norm(std::span<const float> v) {
    double s = 0.0;
    for (float x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

/// Scales to unit length; the all-zero vector maps to e0.
inline void normalize_or_e0(Vector& v) {
    double n = l2_norm(v);
    if (n == 0.0 || !std::isfinite(n)) {
        std::fill(v.begin(), v.end(), 0.0f);
        if (!v.empty()) v[0] = 1.0f;
        return;
    }
    for (float& x : v) x = static_cast<float>(x / n);
}

inline double dot(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

inline double cosine(std::span<const float> a, std::span<const float> b) {
    double na = l2_norm(a);
    double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

namespace detail {
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}
}  // namespace detail

/// Bucket of a term under the hashed embedder.
inline std::size_t hash_bucket(std::string_view term, std::size_t dim) {
    return static_cast<std::size_t>(text::fnv1a64(term) % dim);
}

/// Feature hashing of normalized terms: bucket from FNV-1a, +-1 sign from a
/// second, independent mix. Deterministic offline stand-in for a learned model.
inline Vector hash_embed(std::string_view s, std::size_t dim) {
    if (dim < kMinDim) throw Error(ErrorCode::InvalidArgument, "embedding dim must be >= 8");
    Vector v(dim, 0.0f);
    for (const auto& term : lexindex::normalize_terms(s)) {
        auto h = text::fnv1a64(term);
        float sign = (detail::splitmix64(h ^ 0x5bd1e995ULL) >> 63) ? -1.0f : 1.0f;
        v[h % dim] += sign;
    }
    normalize_or_e0(v);
    return v;
}

namespace detail {

inline std::vector<Vector> embed_remote(const EmbeddingProvider& p, std::span<const std::string> texts) {
    nlohmann::json body = {{"model", p.model_name}, {"input", texts}};
    http::Request req{p.endpoint, body.dump(), {}, p.timeout};
    http::add_bearer(req, p.api_key);
    http::Response res;
    try {
        res = (p.transport ? p.transport : http::default_transport())(req);
    } catch (const http::TransportError& e) {
        throw Error(ErrorCode::ProviderUnreachable, e.what());
    }
    if (res.status < 200 || res.status >= 300)
        throw Error(ErrorCode::ProviderUnreachable, "embedding endpoint returned HTTP " + std::to_string(res.status));
    std::vector<Vector> out(texts.size());
    try {
        auto j = nlohmann::json::parse(res.body);
        const auto& data = j.at("data");
        if (!data.is_array() || data.size() != texts.size())
            throw Error(ErrorCode::ProviderUnreachable, "embedding response has wrong item count");
        std::vector<bool> filled(texts.size(), false);
        for (std::size_t i = 0; i < data.size(); ++i) {
            std::size_t slot = data[i].contains("index") ? data[i].at("index").get<std::size_t>() : i;
            if (slot >= out.size() || filled[slot])
                throw Error(ErrorCode::ProviderUnreachable, "embedding response has bad index");
            auto v = data[i].at("embedding").get<Vector>();
            if (v.size() != p.dim)
                throw Error(ErrorCode::DimensionMismatch, "embedding endpoint returned dim " + std::to_string(v.size()) +
                                                              ", expected " + std::to_string(p.dim));
            normalize_or_e0(v);
            out[slot] = std::move(v);
            filled[slot] = true;
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ProviderUnreachable, std::string("malformed embedding response: ") + e.what());
    }
    return out;
}

}  // namespace detail

/// Unit vectors for every text, order preserved. Remote providers receive
/// one request per batch_size texts.
inline std::vector<Vector> embed_batch(const EmbeddingProvider& provider, std::span<const std::string> texts) {
    provider.validate();
    if (texts.empty()) throw Error(ErrorCode::InvalidArgument, "embed_batch needs at least one text");
    std::vector<Vector> out;
    out.reserve(texts.size());
    if (provider.kind == ProviderKind::hashed) {
        for (const auto& t : texts) out.push_back(hash_embed(t, provider.dim));
        return out;
    }
    std::size_t step = provider.batch_size ? provider.batch_size : texts.size();
    for (std::size_t i = 0; i < texts.size(); i += step) {
        auto part = detail::embed_remote(provider, texts.subspan(i, std::min(step, texts.size() - i)));
        for (auto& v : part) out.push_back(std::move(v));
    }
    return out;
}

inline Vector embed_one(const EmbeddingProvider& provider, const std::string& text) {
    return std::move(embed_batch(provider, std::span<const std::string>(&text, 1)).front());
}

class VectorIndex {
public:
    VectorIndex() = default;
    VectorIndex(std::size_t dim, std::string provider_fingerprint)
        : dim_(dim), provider_fingerprint_(std::move(provider_fingerprint)) {
        if (dim_ < kMinDim) throw Error(ErrorCode::InvalidArgument, "vector index dim must be >= 8");
        finish();
    }

    /// Inserts (normalizing) one vector. Ids must be unique.
    void add(std::string chunk_id, Vector v) {
        if (v.size() != dim_)
            throw Error(ErrorCode::DimensionMismatch, "vector of dim " + std::to_string(v.size()) + " for index dim " +
                                                          std::to_string(dim_));
        if (!by_id_.emplace(chunk_id, ids_.size()).second)
            throw Error(ErrorCode::DuplicateChunkId, "duplicate chunk id " + chunk_id, chunk_id);
        normalize_or_e0(v);
        ids_.push_back(std::move(chunk_id));
        data_.insert(data_.end(), v.begin(), v.end());
        fingerprint_dirty_ = true;
    }

    /// Exact cosine against every entry, top-k, ties by chunk_id.
    std::vector<ScoredHit> search(std::span<const float> query, std::size_t k) const {
        if (query.size() != dim_)
            throw Error(ErrorCode::DimensionMismatch, "query dim " + std::to_string(query.size()) + " vs index dim " +
                                                          std::to_string(dim_));
        if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
        double qn = l2_norm(query);
        std::vector<ScoredHit> hits;
        hits.reserve(ids_.size());
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            double s = qn == 0.0 ? 0.0 : dot(query, entry(i)) / qn;
            hits.push_back({ids_[i], s, HitSource::semantic});
        }
        rank_and_truncate(hits, k);
        return hits;
    }

    std::optional<std::span<const float>> vector(std::string_view chunk_id) const {
        auto it = by_id_.find(std::string(chunk_id));
        if (it == by_id_.end()) return std::nullopt;
        return entry(it->second);
    }

    std::span<const float> entry(std::size_t i) const { return std::span<const float>(data_).subspan(i * dim_, dim_); }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return ids_.size(); }
    const std::vector<std::string>& chunk_ids() const noexcept { return ids_; }
    const std::string& provider_fingerprint() const noexcept { return provider_fingerprint_; }

    const std::string& corpus_fingerprint() const {
        if (fingerprint_dirty_) finish();
        return corpus_fingerprint_;
    }

    static constexpr std::uint8_t kSnapshotVersion = 1;

    /// Header (dim, count, fingerprint), ids, then packed little-endian f32.
    void save(std::ostream& os) const {
        binio::write_magic(os, "SQVX", kSnapshotVersion);
        binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dim_));
        binio::write_le<std::uint64_t>(os, ids_.size());
        binio::write_string(os, provider_fingerprint_);
        for (const auto& id : ids_) binio::write_string(os, id);
        for (float x : data_) binio::write_le<float>(os, x);
        if (!os) throw Error(ErrorCode::IoError, "failed writing vector snapshot");
    }

    static VectorIndex load(std::istream& is) {
        auto version = binio::read_magic(is, "SQVX");
        if (version != kSnapshotVersion)
            throw Error(ErrorCode::SnapshotError, "unsupported vector snapshot version " + std::to_string(version));
        VectorIndex idx;
        idx.dim_ = binio::read_le<std::uint32_t>(is);
        if (idx.dim_ < kMinDim) throw Error(ErrorCode::SnapshotError, "vector snapshot dim below minimum");
        auto count = binio::read_le<std::uint64_t>(is);
        idx.provider_fingerprint_ = binio::read_string(is);
        for (std::uint64_t i = 0; i < count; ++i) {
            auto id = binio::read_string(is);
            if (!idx.by_id_.emplace(id, idx.ids_.size()).second)
                throw Error(ErrorCode::SnapshotError, "duplicate id in vector snapshot");
            idx.ids_.push_back(std::move(id));
        }
        idx.data_.resize(count * idx.dim_);
        for (float& x : idx.data_) x = binio::read_le<float>(is);
        idx.finish();
        return idx;
    }

private:
    void finish() const {
        corpus_fingerprint_ = specqa::corpus_fingerprint(ids_);
        fingerprint_dirty_ = false;
    }

    std::size_t dim_ = 0;
    std::string provider_fingerprint_;
    std::vector<std::string> ids_;
    std::vector<float> data_;
    std::unordered_map<std::string, std::size_t> by_id_;
    mutable std::string corpus_fingerprint_;
    mutable bool fingerprint_dirty_ = true;
};

/// Embeds every chunk text with the provider and indexes it.
inline VectorIndex build_vector_index(std::span<const chunker::Chunk> chunks, const EmbeddingProvider& provider) {
    provider.validate();
    VectorIndex idx(provider.dim, provider.fingerprint());
    if (chunks.empty()) return idx;
    std::vector<std::string> texts;
    texts.reserve(chunks.size());
    for (const auto& c : chunks) texts.push_back(c.text);
    auto vectors = embed_batch(provider, texts);
    for (std::size_t i = 0; i < chunks.size(); ++i) idx.add(chunks[i].chunk_id, std::move(vectors[i]));
    (void)idx.corpus_fingerprint();
    return idx;
}

inline std::vector<ScoredHit> vector_search(const VectorIndex& index, std::span<const float> query, std::size_t k) {
    return index.search(query, k);
}

}  // namespace specqa::vecindex
