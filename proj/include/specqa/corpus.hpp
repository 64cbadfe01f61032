#pragma once

// One immutable index generation (documents, chunks, both indexes) and its
// on-disk snapshot directory.

#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "specqa/chunker.hpp"
#include "specqa/common.hpp"
#include "specqa/error.hpp"
#include "specqa/ingest.hpp"
#include "specqa/lexindex.hpp"
#include "specqa/retriever.hpp"
#include "specqa/vecindex.hpp"

namespace specqa::ingest {

inline void to_json(nlohmann::json& j, const Block& b) {
    j = {{"block_index", b.block_index},
         {"kind", to_string(b.kind)},
         {"level", b.level},
         {"text", b.text},
         {"heading_path", b.heading_path}};
}

inline void from_json(const nlohmann::json& j, Block& b) {
    j.at("block_index").get_to(b.block_index);
    auto kind = parse_block_kind(j.at("kind").get<std::string>());
    if (!kind) throw Error(ErrorCode::SnapshotError, "unknown block kind");
    b.kind = *kind;
    j.at("level").get_to(b.level);
    j.at("text").get_to(b.text);
    j.at("heading_path").get_to(b.heading_path);
}

inline void to_json(nlohmann::json& j, const Document& d) {
    j = {{"doc_id", d.doc_id},   {"title", d.title},   {"source_uri", d.source_uri},
         {"format", to_string(d.format)}, {"blocks", d.blocks}, {"metadata", d.metadata}};
}

inline void from_json(const nlohmann::json& j, Document& d) {
    j.at("doc_id").get_to(d.doc_id);
    j.at("title").get_to(d.title);
    j.at("source_uri").get_to(d.source_uri);
    auto fmt = parse_format(j.at("format").get<std::string>());
    if (!fmt) throw Error(ErrorCode::SnapshotError, "unknown document format");
    d.format = *fmt;
    j.at("blocks").get_to(d.blocks);
    j.at("metadata").get_to(d.metadata);
}

}  // namespace specqa::ingest

namespace specqa::corpus {

namespace fs = std::filesystem;

struct IndexConfig {
    chunker::ChunkPolicy chunk_policy;
    lexindex::Bm25Params bm25;
    vecindex::EmbeddingProvider provider;
};

/// Everything a query needs, built once and never mutated. The indexes are
/// absent while the corpus has no documents.
struct Generation {
    std::vector<ingest::Document> documents;
    chunker::ChunkStore chunks;
    std::optional<lexindex::LexicalIndex> lexical;
    std::optional<vecindex::VectorIndex> vectors;
    IndexConfig config;

    bool empty() const noexcept { return documents.empty(); }
    std::string corpus_fingerprint() const { return lexical ? lexical->corpus_fingerprint() : specqa::corpus_fingerprint({}); }

    const ingest::Document* find_document(std::string_view doc_id) const {
        for (const auto& d : documents) {
            if (d.doc_id == doc_id) return &d;
        }
        return nullptr;
    }

    /// Pipeline bound to this generation; the generation must outlive it.
    retriever::RetrievalPipeline pipeline(const retriever::HybridPolicy& policy,
                                          std::optional<retriever::RerankClient> reranker = std::nullopt,
                                          retriever::RetrievalMode mode = retriever::RetrievalMode::hybrid) const {
        if (empty()) throw Error(ErrorCode::EmptyCorpus, "corpus has no documents");
        return retriever::RetrievalPipeline{chunks, *lexical, *vectors, config.provider, policy, std::move(reranker), mode};
    }
};

using GenerationPtr = std::shared_ptr<const Generation>;

/// Chunks every document and builds both indexes from scratch.
inline GenerationPtr build_generation(std::vector<ingest::Document> documents, const IndexConfig& config) {
    config.chunk_policy.validate();
    config.bm25.validate();
    config.provider.validate();
    std::set<std::string> ids;
    std::vector<chunker::Chunk> all;
    for (const auto& d : documents) {
        if (!ids.insert(d.doc_id).second) throw Error(ErrorCode::DuplicateDocument, "duplicate doc_id: " + d.doc_id);
        auto chunks = chunker::chunk_document(d, config.chunk_policy);
        std::move(chunks.begin(), chunks.end(), std::back_inserter(all));
    }
    auto gen = std::make_shared<Generation>();
    gen->config = config;
    if (!all.empty()) {
        gen->lexical = lexindex::LexicalIndex::build(all, config.bm25);
        gen->vectors = vecindex::build_vector_index(all, config.provider);
    }
    gen->chunks = chunker::ChunkStore(std::move(all));
    gen->documents = std::move(documents);
    return gen;
}

/// New generation with `doc` appended; the old one is left untouched.
inline GenerationPtr with_document(const Generation& base, ingest::Document doc) {
    if (base.find_document(doc.doc_id)) throw Error(ErrorCode::DuplicateDocument, "duplicate doc_id: " + doc.doc_id);
    auto docs = base.documents;
    docs.push_back(std::move(doc));
    return build_generation(std::move(docs), base.config);
}

inline constexpr int kSnapshotFormat = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kDocumentsFile = "documents.jsonl";
inline constexpr const char* kChunksFile = "chunks.jsonl";
inline constexpr const char* kLexicalFile = "lexical.bin";
inline constexpr const char* kVectorsFile = "vectors.bin";

namespace detail {

template <typename Fn>
void write_atomically(const fs::path& target, Fn&& fill) {
    auto tmp = target;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw Error(ErrorCode::IoError, "cannot write " + tmp.string(), tmp.string());
        fill(os);
        os.flush();
        if (!os) throw Error(ErrorCode::IoError, "write failed for " + tmp.string(), tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot replace " + target.string() + ": " + ec.message(), target.string());
}

inline std::ifstream open_input(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw Error(ErrorCode::IoError, "cannot read " + p.string(), p.string());
    return is;
}

}  // namespace detail

inline nlohmann::json provider_json(const vecindex::EmbeddingProvider& p) {
    nlohmann::json j = {{"kind", to_string(p.kind)}, {"model", p.effective_model()}, {"dim", p.dim}};
    if (p.kind == vecindex::ProviderKind::remote) j["endpoint"] = p.endpoint;
    return j;
}

inline nlohmann::json manifest_json(const Generation& g) {
    std::size_t atomic = 0;
    for (const auto& c : g.chunks.all()) atomic += c.atomic_oversize ? 1 : 0;
    return {
        {"format", kSnapshotFormat},
        {"documents", g.documents.size()},
        {"chunks", g.chunks.size()},
        {"atomic_oversize_chunks", atomic},
        {"corpus_fingerprint", g.corpus_fingerprint()},
        {"provider_fingerprint", g.config.provider.fingerprint()},
        {"provider", provider_json(g.config.provider)},
        {"chunk_policy",
         {{"max_tokens", g.config.chunk_policy.max_tokens},
          {"overlap_tokens", g.config.chunk_policy.overlap_tokens},
          {"min_tokens", g.config.chunk_policy.min_tokens}}},
        {"bm25", {{"k1", g.config.bm25.k1}, {"b", g.config.bm25.b}}},
    };
}

/// Writes every file to "<name>.tmp" and renames it into place, manifest last,
/// so a reader never sees a manifest describing files that are not there.
inline void save_snapshot(const Generation& g, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message(), dir.string());
    detail::write_atomically(dir / kDocumentsFile, [&](std::ostream& os) {
        for (const auto& d : g.documents) os << nlohmann::json(d).dump() << '\n';
    });
    detail::write_atomically(dir / kChunksFile, [&](std::ostream& os) { chunker::write_chunks_jsonl(os, g.chunks.all()); });
    if (g.lexical) {
        detail::write_atomically(dir / kLexicalFile, [&](std::ostream& os) { g.lexical->save(os); });
        detail::write_atomically(dir / kVectorsFile, [&](std::ostream& os) { g.vectors->save(os); });
    } else {
        fs::remove(dir / kLexicalFile, ec);
        fs::remove(dir / kVectorsFile, ec);
    }
    detail::write_atomically(dir / kManifestFile, [&](std::ostream& os) { os << manifest_json(g).dump(2) << '\n'; });
}

inline bool has_snapshot(const fs::path& dir) { return fs::exists(dir / kManifestFile); }

inline nlohmann::json read_manifest(const fs::path& dir) {
    auto is = detail::open_input(dir / kManifestFile);
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SnapshotError, std::string("unreadable manifest: ") + e.what(), (dir / kManifestFile).string());
    }
}

/// Provider and policies as recorded in the manifest. Secrets and transport
/// are not persisted; callers fill them in.
inline IndexConfig config_from_manifest(const nlohmann::json& m) {
    IndexConfig cfg;
    try {
        const auto& p = m.at("provider");
        cfg.provider.kind = p.at("kind").get<std::string>() == "remote" ? vecindex::ProviderKind::remote
                                                                         : vecindex::ProviderKind::hashed;
        cfg.provider.model_name = p.at("model").get<std::string>();
        cfg.provider.dim = p.at("dim").get<std::size_t>();
        cfg.provider.endpoint = p.value("endpoint", std::string{});
        const auto& cp = m.at("chunk_policy");
        cfg.chunk_policy.max_tokens = cp.at("max_tokens").get<std::size_t>();
        cfg.chunk_policy.overlap_tokens = cp.at("overlap_tokens").get<std::size_t>();
        cfg.chunk_policy.min_tokens = cp.at("min_tokens").get<std::size_t>();
        cfg.bm25.k1 = m.at("bm25").at("k1").get<double>();
        cfg.bm25.b = m.at("bm25").at("b").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SnapshotError, std::string("manifest is missing fields: ") + e.what());
    }
    return cfg;
}

/// Loads a snapshot and checks every fingerprint. `provider` supplies the
/// runtime side (endpoint override, key, transport) and must match the
/// recorded embedding space.
inline GenerationPtr load_snapshot(const fs::path& dir, const std::optional<vecindex::EmbeddingProvider>& provider = std::nullopt) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "corpus directory not found: " + dir.string(), dir.string());
    if (!has_snapshot(dir)) throw Error(ErrorCode::IoError, "no manifest in " + dir.string(), dir.string());
    auto manifest = read_manifest(dir);
    if (manifest.value("format", 0) != kSnapshotFormat)
        throw Error(ErrorCode::SnapshotError, "unsupported snapshot format", dir.string());
    auto gen = std::make_shared<Generation>();
    gen->config = config_from_manifest(manifest);
    if (provider) {
        if (provider->fingerprint() != gen->config.provider.fingerprint())
            throw Error(ErrorCode::IndexMismatch, "snapshot was embedded with " + gen->config.provider.fingerprint() +
                                                      ", configured provider is " + provider->fingerprint());
        gen->config.provider = *provider;
    }

    {
        auto is = detail::open_input(dir / kDocumentsFile);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (text::trim(line).empty()) continue;
            try {
                gen->documents.push_back(nlohmann::json::parse(line).get<ingest::Document>());
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorCode::SnapshotError, "bad document record at line " + std::to_string(lineno) + ": " + e.what());
            }
        }
    }
    {
        auto is = detail::open_input(dir / kChunksFile);
        gen->chunks = chunker::ChunkStore(chunker::read_chunks_jsonl(is));
    }
    if (!gen->chunks.empty()) {
        auto lis = detail::open_input(dir / kLexicalFile);
        gen->lexical = lexindex::LexicalIndex::load(lis);
        auto vis = detail::open_input(dir / kVectorsFile);
        gen->vectors = vecindex::VectorIndex::load(vis);
    }

    std::vector<std::string> ids;
    for (const auto& c : gen->chunks.all()) ids.push_back(c.chunk_id);
    auto fp = specqa::corpus_fingerprint(ids);
    if (fp != manifest.value("corpus_fingerprint", std::string{}))
        throw Error(ErrorCode::SnapshotError, "chunk file does not match the manifest fingerprint", dir.string());
    if (gen->lexical) {
        if (gen->lexical->corpus_fingerprint() != fp || gen->vectors->corpus_fingerprint() != fp)
            throw Error(ErrorCode::SnapshotError, "index files do not match the chunk file", dir.string());
        if (gen->vectors->provider_fingerprint() != gen->config.provider.fingerprint())
            throw Error(ErrorCode::SnapshotError, "vector index provider does not match the manifest", dir.string());
    }
    if (manifest.value("documents", std::size_t{0}) != gen->documents.size())
        throw Error(ErrorCode::SnapshotError, "document count does not match the manifest", dir.string());
    return gen;
}

}  // namespace specqa::corpus
