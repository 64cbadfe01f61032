#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "specqa/lexindex.hpp"
#include "specqa/retriever.hpp"
#include "specqa/vecindex.hpp"
#include "testkit.hpp"

using namespace specqa;
using Catch::Matchers::WithinAbs;
using nlohmann::json;
using testkit::make_chunk;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected specqa::Error");
    return ErrorCode::InvalidArgument;
}

std::vector<std::string> ids(const std::vector<ScoredHit>& hits) {
    std::vector<std::string> out;
    for (const auto& h : hits) out.push_back(h.chunk_id);
    return out;
}

std::vector<chunker::Chunk> fox_corpus() {
    return {make_chunk("c", 0, "red fox"), make_chunk("c", 1, "red red fox"), make_chunk("c", 2, "blue sky")};
}

/// Embedding endpoint answering each input with a caller-chosen vector.
http::Transport fixed_vectors(std::function<std::vector<float>(const std::string&)> fn,
                              std::shared_ptr<int> requests = std::make_shared<int>(0)) {
    return [fn, requests](const http::Request& req) -> http::Response {
        ++*requests;
        auto in = json::parse(req.body).at("input");
        json data = json::array();
        for (std::size_t i = 0; i < in.size(); ++i) data.push_back({{"index", i}, {"embedding", fn(in[i].get<std::string>())}});
        return {200, json{{"data", data}}.dump()};
    };
}

}  // namespace

TEST_CASE("normalize_terms") {
    CHECK(lexindex::normalize_terms("EIRP limits") == std::vector<std::string>{"eirp", "limits"});
    CHECK(lexindex::normalize_terms("").empty());
    CHECK(lexindex::normalize_terms("3,500 MHz") == std::vector<std::string>{"3", "500", "mhz"});
}

TEST_CASE("build_lexical_index statistics") {
    auto one = lexindex::build_lexical_index(std::vector{make_chunk("c", 0, "a a b")});
    CHECK(one.postings("a") == std::vector<std::pair<std::string, std::uint32_t>>{{"c#0", 2}});
    CHECK(one.postings("b") == std::vector<std::pair<std::string, std::uint32_t>>{{"c#0", 1}});
    CHECK(one.avg_doc_length() == 3.0);
    CHECK(one.corpus_size() == 1);

    std::vector dup{make_chunk("c", 0, "x"), make_chunk("c", 0, "y")};
    CHECK(code_of([&] { lexindex::build_lexical_index(dup); }) == ErrorCode::DuplicateChunkId);

    auto corpus = fox_corpus();
    auto idx = lexindex::build_lexical_index(corpus);
    double total = 0;
    for (const auto& c : corpus) {
        auto terms = testkit::oracle_terms(c.text);
        total += static_cast<double>(terms.size());
        CHECK(idx.doc_length(c.chunk_id) == terms.size());
        for (const auto& t : terms) {
            std::size_t df = 0;
            for (const auto& o : corpus) {
                auto ot = testkit::oracle_terms(o.text);
                df += std::find(ot.begin(), ot.end(), t) != ot.end();
            }
            CHECK(idx.document_frequency(t) == df);
        }
    }
    CHECK(idx.avg_doc_length() == total / 3.0);
    CHECK(code_of([] { lexindex::Bm25Params{1.2, 1.5}.validate(); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("lexical_search examples") {
    auto idx = lexindex::build_lexical_index(fox_corpus());
    CHECK(lexindex::lexical_search(idx, "zebra", 3).empty());
    CHECK(lexindex::lexical_search(idx, "", 3).empty());

    auto hits = lexindex::lexical_search(idx, "red", 3);
    CHECK(ids(hits) == std::vector<std::string>{"c#1", "c#0"});
    std::vector<std::pair<std::string, std::string>> raw;
    for (const auto& c : fox_corpus()) raw.emplace_back(c.chunk_id, c.text);
    auto oracle = testkit::bm25_oracle(raw, "red", 3);
    REQUIRE(oracle.size() == 2);
    CHECK_THAT(hits[0].score, WithinAbs(oracle[0].score, 1e-12));
    CHECK_THAT(hits[1].score, WithinAbs(oracle[1].score, 1e-12));
    CHECK(hits[0].source == HitSource::lexical);

    CHECK(lexindex::lexical_search(idx, "red fox blue sky", 100).size() == 3);
}

TEST_CASE("lexical index snapshot round-trip") {
    std::mt19937_64 rng(5);
    std::vector<chunker::Chunk> chunks;
    for (std::size_t i = 0; i < 40; ++i) chunks.push_back(make_chunk("d" + std::to_string(i % 4), i / 4, testkit::sentence(rng, 30, 60)));
    auto idx = lexindex::build_lexical_index(chunks, {1.5, 0.6});
    std::stringstream ss;
    idx.save(ss);
    auto back = lexindex::LexicalIndex::load(ss);
    CHECK(back == idx);
    CHECK(back.search("w3 w7 w11", 10) == idx.search("w3 w7 w11", 10));

    std::stringstream truncated(ss.str().substr(0, ss.str().size() / 2));
    CHECK(code_of([&] { lexindex::LexicalIndex::load(truncated); }) == ErrorCode::SnapshotError);
}

// ---------------------------------------------------------------------------

TEST_CASE("hash_embed") {
    auto a = vecindex::hash_embed("PCS base station EIRP", 64);
    CHECK(a == vecindex::hash_embed("PCS base station EIRP", 64));
    CHECK_THAT(vecindex::l2_norm(a), WithinAbs(1.0, 1e-6));
    auto e = vecindex::hash_embed("", 64);
    CHECK(e[0] == 1.0f);
    CHECK_THAT(vecindex::l2_norm(e), WithinAbs(1.0, 1e-12));
    CHECK(vecindex::hash_embed("Watts watts!", 64) == vecindex::hash_embed("watts WATTS", 64));
}

TEST_CASE("embed_batch") {
    auto hashed = vecindex::EmbeddingProvider::hashed(32);
    std::vector<std::string> texts{"a", "b"};
    auto v = vecindex::embed_batch(hashed, texts);
    REQUIRE(v.size() == 2);
    for (const auto& x : v) CHECK_THAT(vecindex::l2_norm(x), WithinAbs(1.0, 1e-6));
    CHECK(hashed.fingerprint() == "hashed/fnv1a-signed-v1/32");

    auto wrong = vecindex::EmbeddingProvider::remote("http://127.0.0.1:9/v1/embeddings", "m", 256);
    wrong.transport = fixed_vectors([](const std::string&) { return std::vector<float>(512, 1.0f); });
    CHECK(code_of([&] { vecindex::embed_batch(wrong, texts); }) == ErrorCode::DimensionMismatch);

    auto requests = std::make_shared<int>(0);
    auto ordered = vecindex::EmbeddingProvider::remote("http://127.0.0.1:9/v1/embeddings", "m", 8);
    ordered.batch_size = 2;
    ordered.transport = fixed_vectors(
        [](const std::string& s) {
            std::vector<float> out(8, 0.0f);
            out[static_cast<std::size_t>(std::stoi(s))] = 1.0f;
            return out;
        },
        requests);
    std::vector<std::string> many{"3", "0", "7", "5", "1"};
    auto got = vecindex::embed_batch(ordered, many);
    REQUIRE(got.size() == 5);
    for (std::size_t i = 0; i < many.size(); ++i) CHECK(got[i][static_cast<std::size_t>(std::stoi(many[i]))] == 1.0f);
    CHECK(*requests == 3);

    auto down = vecindex::EmbeddingProvider::remote("http://127.0.0.1:9/v1/embeddings", "m", 8);
    down.transport = testkit::unreachable_transport();
    CHECK(code_of([&] { vecindex::embed_batch(down, texts); }) == ErrorCode::ProviderUnreachable);
    down.transport = [](const http::Request&) { return http::Response{500, "oops"}; };
    CHECK(code_of([&] { vecindex::embed_batch(down, texts); }) == ErrorCode::ProviderUnreachable);
    down.transport = [](const http::Request&) { return http::Response{200, "{\"data\": 3}"}; };
    CHECK(code_of([&] { vecindex::embed_batch(down, texts); }) == ErrorCode::ProviderUnreachable);
}

TEST_CASE("vector_search examples") {
    vecindex::VectorIndex idx(8, "test");
    std::vector<float> e0(8, 0.0f), e1(8, 0.0f), mix(8, 0.0f);
    e0[0] = 1;
    e1[1] = 1;
    mix[0] = 3;
    mix[2] = 4;
    idx.add("a", e0);
    idx.add("b", e1);
    idx.add("c", mix);

    auto hits = vecindex::vector_search(idx, e1, 3);
    REQUIRE(hits.size() == 3);
    CHECK(hits[0].chunk_id == "b");
    CHECK_THAT(hits[0].score, WithinAbs(1.0, 1e-6));
    CHECK(hits[1].score == 0.0);
    CHECK(hits[2].score == 0.0);
    CHECK(ids(hits) == std::vector<std::string>{"b", "a", "c"});

    CHECK(code_of([&] { idx.add("a", e0); }) == ErrorCode::DuplicateChunkId);
    CHECK(code_of([&] { idx.add("z", std::vector<float>(4, 1.0f)); }) == ErrorCode::DimensionMismatch);
    CHECK(code_of([&] { vecindex::vector_search(idx, std::vector<float>(4, 1.0f), 1); }) == ErrorCode::DimensionMismatch);

    std::mt19937_64 rng(19);
    std::normal_distribution<float> nd;
    for (int round = 0; round < 50; ++round) {
        vecindex::VectorIndex r(16, "test");
        std::vector<std::pair<std::string, std::vector<float>>> entries;
        for (int i = 0; i < 5; ++i) {
            std::vector<float> v(16);
            for (auto& x : v) x = nd(rng);
            entries.emplace_back("v" + std::to_string(i), v);
            r.add(entries.back().first, v);
        }
        std::vector<float> q(16);
        for (auto& x : q) x = nd(rng);
        auto got = r.search(q, 5);
        auto want = testkit::cosine_oracle(entries, q, 5);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].chunk_id == want[i].id);
            CHECK_THAT(got[i].score, WithinAbs(want[i].score, 1e-5));
        }
    }
}

TEST_CASE("vector index snapshot round-trip and provider fingerprint") {
    std::vector chunks{make_chunk("d", 0, "alpha beta"), make_chunk("d", 1, "gamma delta")};
    auto provider = vecindex::EmbeddingProvider::hashed(64);
    auto idx = vecindex::build_vector_index(chunks, provider);
    CHECK(idx.provider_fingerprint() == provider.fingerprint());
    std::stringstream ss;
    idx.save(ss);
    auto back = vecindex::VectorIndex::load(ss);
    CHECK(back.chunk_ids() == idx.chunk_ids());
    CHECK(back.provider_fingerprint() == idx.provider_fingerprint());
    CHECK(back.corpus_fingerprint() == idx.corpus_fingerprint());
    auto q = vecindex::hash_embed("gamma", 64);
    CHECK(back.search(q, 2) == idx.search(q, 2));
}

// ---------------------------------------------------------------------------

TEST_CASE("rrf_fuse examples") {
    std::vector<std::vector<std::string>> one{{"a", "b"}};
    CHECK(ids(retriever::rrf_fuse(one, 60)) == std::vector<std::string>{"a", "b"});

    std::vector<std::vector<std::string>> crossed{{"a", "b"}, {"b", "a"}};
    auto fused = retriever::rrf_fuse(crossed, 60);
    CHECK(ids(fused) == std::vector<std::string>{"a", "b"});
    CHECK(fused[0].score == fused[1].score);
    CHECK_THAT(fused[0].score, WithinAbs(1.0 / 61 + 1.0 / 62, 1e-15));

    std::vector<std::vector<std::string>> disjoint{{"a"}, {"b"}};
    auto d = retriever::rrf_fuse(disjoint, 60);
    CHECK(ids(d) == std::vector<std::string>{"a", "b"});
    CHECK(d[0].score == 1.0 / 61);
    CHECK(d[1].score == 1.0 / 61);
    CHECK(d[0].source == HitSource::fused);
}

TEST_CASE("hybrid_search") {
    auto provider = vecindex::EmbeddingProvider::hashed(128);
    std::vector chunks{make_chunk("d", 0, "urban areas limit base station power"),
                       make_chunk("d", 1, "mobile stations handheld power"),
                       make_chunk("d", 2, "height above average terrain tiers"),
                       make_chunk("e", 0, "SRSP licensing notes and zq17 identifier")};
    auto lex = lexindex::build_lexical_index(chunks);
    auto vec = vecindex::build_vector_index(chunks, provider);
    retriever::HybridPolicy policy;

    auto exact = retriever::hybrid_search(lex, vec, provider, "mobile stations handheld power", policy);
    REQUIRE_FALSE(exact.empty());
    CHECK(exact[0].chunk_id == "d#1");

    CHECK(retriever::hybrid_search(lex, vec, provider, "", policy).empty());
    CHECK(retriever::hybrid_search(lex, vec, provider, " ,, ", policy).empty());

    auto other = vecindex::EmbeddingProvider::hashed(64);
    CHECK(code_of([&] { retriever::hybrid_search(lex, vec, other, "power", policy); }) == ErrorCode::IndexMismatch);
}

TEST_CASE("a keyword missed by the semantic leg still surfaces through fusion") {
    // Remote stub embeds every chunk on axis 0 except the needle, placed on an
    // axis no query reaches; the query lands on axis 0 too.
    constexpr std::size_t dim = 8;
    auto provider = vecindex::EmbeddingProvider::remote("http://127.0.0.1:9/v1/embeddings", "stub", dim);
    provider.transport = fixed_vectors([](const std::string& s) {
        std::vector<float> v(dim, 0.0f);
        v[s.find("zq17") != std::string::npos && s.find("find") == std::string::npos ? 5 : 0] = 1.0f;
        return v;
    });
    std::vector<chunker::Chunk> chunks;
    for (std::size_t i = 0; i < 12; ++i) chunks.push_back(make_chunk("d", i, "filler text number " + std::to_string(i)));
    chunks.push_back(make_chunk("n", 0, "the zq17 clause"));
    auto lex = lexindex::build_lexical_index(chunks);
    auto vec = vecindex::build_vector_index(chunks, provider);
    retriever::HybridPolicy policy;
    policy.k_semantic = 5;
    policy.final_k = 8;

    std::string query = "find zq17";
    auto semantic = retriever::semantic_leg(vec, provider, query, policy.k_semantic, policy.min_semantic_score);
    auto semantic_ids = ids(semantic);
    CHECK(std::find(semantic_ids.begin(), semantic_ids.end(), "n#0") == semantic_ids.end());

    std::vector<std::vector<std::string>> lists{ids(semantic), ids(lex.search(query, policy.k_lexical))};
    auto oracle = retriever::rrf_fuse(lists, policy.rrf_k);
    oracle.resize(std::min(oracle.size(), policy.final_k));
    auto fused = retriever::hybrid_search(lex, vec, provider, query, policy);
    CHECK(fused == oracle);
    auto fused_ids = ids(fused);
    CHECK(std::find(fused_ids.begin(), fused_ids.end(), "n#0") != fused_ids.end());
}

TEST_CASE("rerank") {
    std::vector<ScoredHit> hits{{"a", 0.3, HitSource::fused}, {"b", 0.2, HitSource::fused}, {"c", 0.1, HitSource::fused}};
    std::unordered_map<std::string, std::string> texts{{"a", "A"}, {"b", "B"}, {"c", "C"}};

    retriever::RerankClient reversed{"http://127.0.0.1:9/rerank"};
    reversed.transport = [](const http::Request& req) {
        auto n = json::parse(req.body).at("passages").size();
        json scores = json::array();
        for (std::size_t i = 0; i < n; ++i) scores.push_back(static_cast<double>(i));
        return http::Response{200, json{{"scores", scores}}.dump()};
    };
    CHECK(ids(retriever::rerank(reversed, "q", hits, texts)) == std::vector<std::string>{"c", "b", "a"});

    auto calls = std::make_shared<int>(0);
    retriever::RerankClient counting{"http://127.0.0.1:9/rerank"};
    counting.transport = [calls](const http::Request&) {
        ++*calls;
        return http::Response{500, ""};
    };
    std::vector<ScoredHit> single{hits[0]};
    auto kept = retriever::rerank(counting, "q", single, texts);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].chunk_id == single[0].chunk_id);
    CHECK(kept[0].score == single[0].score);
    CHECK(kept[0].source == HitSource::reranked);
    CHECK(*calls == 0);

    retriever::RerankClient down{"http://127.0.0.1:9/rerank"};
    down.transport = testkit::unreachable_transport();
    CHECK(code_of([&] { retriever::rerank(down, "q", hits, texts); }) == ErrorCode::RerankUnavailable);
    CHECK(code_of([&] { retriever::rerank(counting, "q", hits, texts); }) == ErrorCode::RerankUnavailable);
}

TEST_CASE("expand_context examples") {
    std::vector<chunker::Chunk> chunks;
    for (std::size_t i = 0; i < 6; ++i) chunks.push_back(make_chunk("d", i, "part " + std::to_string(i)));
    chunks.push_back(make_chunk("s", 0, "short zero"));
    chunks.push_back(make_chunk("s", 1, "short one"));
    chunker::ChunkStore store(chunks);

    std::vector<ScoredHit> two{{"d#2", 0.9, HitSource::fused}, {"s#1", 0.5, HitSource::fused}};
    auto w0 = retriever::expand_context(store, two, 0);
    REQUIRE(w0.size() == 2);
    CHECK((w0[0].doc_id == "d" && w0[0].lo == 2 && w0[0].hi == 2));
    CHECK((w0[1].doc_id == "s" && w0[1].lo == 1 && w0[1].hi == 1));

    std::vector<ScoredHit> adjacent{{"d#2", 0.4, HitSource::fused}, {"d#3", 0.7, HitSource::fused}};
    auto merged = retriever::expand_context(store, adjacent, 1);
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].lo == 1);
    CHECK(merged[0].hi == 4);
    CHECK(merged[0].score == 0.7);
    CHECK(merged[0].seed_chunk_ids == std::vector<std::string>{"d#2", "d#3"});
    CHECK(merged[0].text == "part 1\n\npart 2\n\npart 3\n\npart 4");

    std::vector<ScoredHit> edge{{"s#0", 1.0, HitSource::fused}};
    auto clipped = retriever::expand_context(store, edge, 2);
    REQUIRE(clipped.size() == 1);
    CHECK(clipped[0].lo == 0);
    CHECK(clipped[0].hi == 1);
}

TEST_CASE("windows drop the overlap repeated between neighbouring chunks") {
    std::string a, b;
    for (int i = 0; i < 200; ++i) a += "a" + std::to_string(i) + " ";
    for (int i = 0; i < 200; ++i) b += "b" + std::to_string(i) + " ";
    auto doc = ingest::parse_marked_text(a + "\n\n" + b, "d");
    chunker::ChunkStore store(chunker::chunk_document(doc, {}));
    REQUIRE(store.size() == 2);
    std::vector<ScoredHit> hit{{"d#0", 1.0, HitSource::fused}};
    auto w = retriever::expand_context(store, hit, 1);
    REQUIRE(w.size() == 1);
    CHECK(text::count_tokens(w[0].text) == 400);
}

TEST_CASE("evaluate_retrieval") {
    auto provider = vecindex::EmbeddingProvider::hashed(256);
    std::vector<chunker::Chunk> chunks;
    std::vector<retriever::LabeledQuery> planted;
    std::mt19937_64 rng(2);
    for (std::size_t i = 0; i < 30; ++i) {
        std::string needle = "needle" + std::to_string(i) + "q";
        chunks.push_back(make_chunk("d" + std::to_string(i / 5), i % 5, testkit::sentence(rng, 20, 200) + " " + needle));
        planted.push_back({needle, chunks.back().chunk_id});
    }
    chunker::ChunkStore store(chunks);
    auto lex = lexindex::build_lexical_index(chunks);
    auto vec = vecindex::build_vector_index(chunks, provider);
    retriever::RetrievalPipeline pipeline{store, lex, vec, provider, {}, std::nullopt};

    auto m = retriever::evaluate_retrieval(pipeline, planted);
    CHECK(m.recall_at_k == 1.0);
    CHECK(m.mrr == 1.0);
    CHECK(m.query_count == 30);
    CHECK(m.k == 8);

    std::vector<retriever::LabeledQuery> absent{{"nothingmatches", "d0#0"}, {"void", "d1#1"}};
    pipeline.mode = retriever::RetrievalMode::lexical;
    CHECK(retriever::evaluate_retrieval(pipeline, absent).recall_at_k == 0.0);

    // The second-ranked chunk for "red" in the fox corpus is c#0.
    auto fox = fox_corpus();
    chunker::ChunkStore fox_store(fox);
    auto fox_lex = lexindex::build_lexical_index(fox);
    auto fox_vec = vecindex::build_vector_index(fox, provider);
    retriever::RetrievalPipeline fox_pipe{fox_store, fox_lex, fox_vec, provider, {}, std::nullopt,
                                          retriever::RetrievalMode::lexical};
    std::vector<retriever::LabeledQuery> second{{"red", "c#0"}};
    CHECK(retriever::evaluate_retrieval(fox_pipe, second).mrr == 0.5);

    std::vector<retriever::LabeledQuery> none;
    CHECK(code_of([&] { retriever::evaluate_retrieval(pipeline, none); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("pipeline falls back to fused order when the reranker is down") {
    auto provider = vecindex::EmbeddingProvider::hashed(64);
    std::vector chunks{make_chunk("d", 0, "power limit one"), make_chunk("d", 1, "power limit two"),
                       make_chunk("d", 2, "antenna height")};
    chunker::ChunkStore store(chunks);
    auto lex = lexindex::build_lexical_index(chunks);
    auto vec = vecindex::build_vector_index(chunks, provider);
    retriever::HybridPolicy policy;
    policy.rerank = true;
    retriever::RerankClient down{"http://127.0.0.1:9/rerank"};
    down.transport = testkit::unreachable_transport();
    retriever::RetrievalPipeline with{store, lex, vec, provider, policy, down};
    policy.rerank = false;
    retriever::RetrievalPipeline without{store, lex, vec, provider, policy, std::nullopt};

    auto r = with.retrieve("power limit");
    CHECK_FALSE(r.reranked);
    REQUIRE(r.rerank_fallback.has_value());
    CHECK(r.hits == without.retrieve("power limit").hits);
}
