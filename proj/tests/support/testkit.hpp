#pragma once

// Shared by the unit and acceptance suites: independent oracles, corpus
// generators and in-process stand-ins for the HTTP backends.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "specqa/chunker.hpp"
#include "specqa/http.hpp"
#include "specqa/ingest.hpp"
#include "specqa/rulecode.hpp"
#include "specqa/vecindex.hpp"

namespace testkit {

using nlohmann::json;
using specqa::chunker::Chunk;

#ifdef SPECQA_DATA_DIR
inline std::filesystem::path data_dir() { return SPECQA_DATA_DIR; }
#endif

inline std::filesystem::path scratch_dir(const std::string& name) {
    static std::atomic<int> counter{0};
    auto p = std::filesystem::temp_directory_path() /
             ("specqa-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + "-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

// ---------------------------------------------------------------------------
// Oracles. Written against the formulas, not the library internals.

/// Lowercased maximal [A-Za-z0-9] runs.
inline std::vector<std::string> oracle_terms(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char ch : s) {
        if (std::isalnum(ch) && ch < 128) {
            cur.push_back(static_cast<char>(std::tolower(ch)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

struct OracleHit {
    std::string id;
    double score;
};

/// Okapi BM25 with idf = ln(1 + (N - df + 0.5) / (df + 0.5)), every query
/// term occurrence contributing, computed per chunk by rescanning the corpus.
inline std::vector<OracleHit> bm25_oracle(const std::vector<std::pair<std::string, std::string>>& corpus,
                                          const std::string& query, std::size_t k, double k1 = 1.2, double b = 0.75) {
    std::vector<std::vector<std::string>> docs;
    double total = 0;
    for (const auto& [id, text] : corpus) {
        docs.push_back(oracle_terms(text));
        total += static_cast<double>(docs.back().size());
    }
    const double n = static_cast<double>(corpus.size());
    const double avgdl = total / n;
    auto q = oracle_terms(query);
    std::vector<OracleHit> hits;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        double score = 0;
        bool matched = false;
        for (const auto& term : q) {
            double tf = static_cast<double>(std::count(docs[d].begin(), docs[d].end(), term));
            if (tf == 0) continue;
            matched = true;
            double df = 0;
            for (const auto& other : docs) df += std::find(other.begin(), other.end(), term) != other.end() ? 1 : 0;
            double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
            double dl = static_cast<double>(docs[d].size());
            score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl / avgdl));
        }
        if (matched) hits.push_back({corpus[d].first, score});
    }
    std::sort(hits.begin(), hits.end(), [](const OracleHit& a, const OracleHit& c) {
        return a.score != c.score ? a.score > c.score : a.id < c.id;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
}

inline std::vector<OracleHit> cosine_oracle(const std::vector<std::pair<std::string, std::vector<float>>>& entries,
                                            const std::vector<float>& q, std::size_t k) {
    auto norm = [](const std::vector<float>& v) {
        double s = 0;
        for (float x : v) s += static_cast<double>(x) * x;
        return std::sqrt(s);
    };
    std::vector<OracleHit> hits;
    for (const auto& [id, v] : entries) {
        double d = 0;
        for (std::size_t i = 0; i < v.size(); ++i) d += static_cast<double>(v[i]) * q[i];
        double nv = norm(v), nq = norm(q);
        hits.push_back({id, nv == 0 || nq == 0 ? 0.0 : d / (nv * nq)});
    }
    std::sort(hits.begin(), hits.end(), [](const OracleHit& a, const OracleHit& c) {
        return a.score != c.score ? a.score > c.score : a.id < c.id;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
}

/// Heading path by replaying a stack over (level, text) events: a heading
/// pops every open heading of equal or deeper level, then pushes itself.
inline std::vector<std::vector<std::string>> heading_path_oracle(const std::vector<std::pair<int, std::string>>& events) {
    std::vector<std::pair<int, std::string>> stack;
    std::vector<std::vector<std::string>> out;
    for (const auto& [level, text] : events) {
        if (level > 0) {
            while (!stack.empty() && stack.back().first >= level) stack.pop_back();
        }
        std::vector<std::string> path;
        for (const auto& s : stack) path.push_back(s.second);
        out.push_back(path);
        if (level > 0) stack.emplace_back(level, text);
    }
    return out;
}

/// Counts the knowledge-graph nodes and edges straight from the rule structure.
struct GraphCount {
    std::size_t classes = 0, constraints = 0, limits = 0, nodes = 0, edges = 0;
};

inline GraphCount graph_recount(const specqa::rulecode::RuleSet& r) {
    GraphCount g;
    for (const auto& c : r.station_classes) {
        ++g.classes;
        std::size_t k = (c.flat_limit_watts ? 1 : 0) + (c.default_tier ? 1 : 0) + (c.urban_limit_watts ? 1 : 0) +
                        c.haat_tiers.size();
        g.constraints += k;
        g.limits += k;
    }
    g.nodes = 1 + g.classes + g.constraints + g.limits;
    g.edges = g.classes + g.constraints + g.limits;
    return g;
}

// ---------------------------------------------------------------------------
// Generators

inline std::string word(std::mt19937_64& rng, std::size_t vocab) {
    return "w" + std::to_string(std::uniform_int_distribution<std::size_t>(0, vocab - 1)(rng));
}

inline std::string sentence(std::mt19937_64& rng, std::size_t words, std::size_t vocab) {
    std::string s;
    for (std::size_t i = 0; i < words; ++i) {
        if (i) s += ' ';
        s += word(rng, vocab);
    }
    return s + ".";
}

inline Chunk make_chunk(const std::string& doc_id, std::size_t ordinal, const std::string& text) {
    Chunk c;
    c.doc_id = doc_id;
    c.ordinal = ordinal;
    c.chunk_id = specqa::chunker::make_chunk_id(doc_id, ordinal);
    c.text = text;
    c.token_count = specqa::text::count_tokens(text);
    c.first_block = c.last_block = ordinal;
    return c;
}

/// Marked-text document with nested headings, paragraphs (some oversize) and
/// tables of varying size; returns the text and the table texts planted.
struct GeneratedDoc {
    std::string raw;
    std::vector<std::string> tables;  // serialized as the parser will produce them
};

inline GeneratedDoc random_marked_doc(std::mt19937_64& rng, std::size_t max_tokens) {
    GeneratedDoc g;
    std::uniform_int_distribution<int> nblocks(3, 14), kind(0, 9), level(1, 4), nwords(3, 40), rows(1, 12),
        cols(1, 5);
    int n = nblocks(rng);
    bool any_table = false;
    for (int i = 0; i < n || !any_table; ++i) {
        int k = kind(rng);
        if (k <= 1) {
            g.raw += std::string(static_cast<std::size_t>(level(rng)), '#') + " " + sentence(rng, 3, 50) + "\n\n";
        } else if (k <= 3 || (i >= n && !any_table)) {
            any_table = true;
            int r = rows(rng), c = cols(rng);
            if (kind(rng) == 0) r = static_cast<int>(max_tokens / 2);  // oversize table
            std::string serialized;
            for (int ri = 0; ri < r; ++ri) {
                std::string line;
                for (int ci = 0; ci < c; ++ci) {
                    auto cell = word(rng, 300) + (kind(rng) < 3 ? " " + word(rng, 300) : "");
                    line += (ci ? "|" : "") + cell;
                    serialized += (ci ? "|" : "") + cell;
                }
                g.raw += (c == 1 ? "|" + line + "|" : line) + "\n";
                if (ri + 1 < r) serialized += "\n";
            }
            g.raw += "\n";
            g.tables.push_back(serialized);
        } else {
            int sentences = kind(rng) == 0 ? 30 : 1 + kind(rng) / 3;
            std::string para;
            for (int s = 0; s < sentences; ++s) para += (s ? " " : "") + sentence(rng, static_cast<std::size_t>(nwords(rng)), 400);
            g.raw += para + "\n\n";
        }
    }
    return g;
}

/// Station classes with random tiers that satisfy every invariant, using
/// names the parser's kind inference understands.
inline specqa::rulecode::RuleSet random_ruleset(std::mt19937_64& rng) {
    using namespace specqa::rulecode;
    std::uniform_int_distribution<int> coin(0, 1), ntiers(0, 5), step(1, 800), drop(0, 400);
    std::uniform_real_distribution<double> frac(0.3, 1.0);
    RuleSet r;
    r.band_name = "Band " + std::to_string(rng() % 1000);
    r.ruleset_id = slugify(r.band_name);
    double threshold = coin(rng) ? 1.0 : 5.0;
    r.bandwidth_threshold_mhz = threshold;
    std::string bw = threshold == 1.0 ? "1MHz" : "5MHz";
    bool narrow = coin(rng), wide = coin(rng), mobile = coin(rng);
    if (!narrow && !wide && !mobile) mobile = true;
    auto base = [&](StationKind kind, std::string name, BandwidthRule rule) {
        StationClass c;
        c.name = std::move(name);
        c.kind = kind;
        c.bandwidth_rule = rule;
        double haat = static_cast<double>(step(rng));
        double limit = std::round(5000.0 * frac(rng));
        c.default_tier = HaatTier{haat, limit};
        if (coin(rng)) c.urban_limit_watts = std::round(limit * frac(rng) * 1.2 + 1.0);
        int n = ntiers(rng);
        for (int i = 0; i < n; ++i) {
            haat += static_cast<double>(step(rng));
            limit = std::max(1.0, limit - static_cast<double>(drop(rng)));
            c.haat_tiers.push_back({haat, limit});
        }
        return c;
    };
    if (narrow) r.station_classes.push_back(base(StationKind::base_narrow, "Base Stations Less Equal " + bw, BandwidthRule::absolute));
    if (wide) r.station_classes.push_back(base(StationKind::base_wide, "Base_Stations_More_" + bw, BandwidthRule::per_mhz));
    if (mobile) {
        StationClass c;
        c.name = "Mobile_Stations";
        c.kind = StationKind::mobile;
        c.flat_limit_watts = static_cast<double>(1 + rng() % 10);
        r.station_classes.push_back(c);
    }
    if (!narrow && !wide) r.bandwidth_threshold_mhz = 1.0;
    return r;
}

// ---------------------------------------------------------------------------
// Stub backends (Transport functions; no sockets)

/// Chat endpoint that records every prompt and replies with a fixed or computed text.
struct StubLlm {
    std::function<std::string(const std::string& prompt)> reply = [](const std::string& p) { return p; };
    int status = 200;
    std::shared_ptr<std::atomic<int>> calls = std::make_shared<std::atomic<int>>(0);
    std::shared_ptr<std::vector<std::string>> prompts = std::make_shared<std::vector<std::string>>();
    std::shared_ptr<std::mutex> mu = std::make_shared<std::mutex>();

    specqa::http::Transport transport() const {
        auto self = *this;
        return [self](const specqa::http::Request& req) -> specqa::http::Response {
            ++*self.calls;
            auto j = json::parse(req.body);
            std::string prompt = j.at("messages").back().at("content").get<std::string>();
            {
                std::lock_guard lock(*self.mu);
                self.prompts->push_back(prompt);
            }
            if (self.status != 200) return {self.status, "{\"error\":\"stub\"}"};
            json body = {{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", self.reply(prompt)}}}}})}};
            return {200, body.dump()};
        };
    }
};

inline specqa::http::Transport unreachable_transport() {
    return [](const specqa::http::Request& req) -> specqa::http::Response {
        throw specqa::http::TransportError("connection refused: " + req.url);
    };
}

/// The PCS rule listing exactly as shipped in data/.
inline constexpr std::string_view kPcsListing = R"({"PCS Bands Canada": {
    "Base Stations Less Equal 1MHz": {
      "Max eirp": {
        "HAAT_up_to_300m": "3280 watts",
        "Urban_Areas": "1640 watts",
        "Height_Restrictions": [
          {"HAAT_up_to_500m": "1070 watts"},
          {"HAAT_up_to_1000m": "490 watts"},
          {"HAAT_up_to_1500m": "270 watts"},
          {"HAAT_up_to_2000m": "160 watts"}
        ]
      }
    },
    "Base_Stations_More_1MHz": {
      "Max_eirp_per_MHz": {
        "HAAT_up_to_300m": "3280 watts",
        "Urban_Areas": "1640 watts",
        "Height_Restrictions": [
          {"HAAT_up_to_500m": "1070 watts per MHz"},
          {"HAAT_up_to_1000m": "490 watts per MHz"},
          {"HAAT_up_to_1500m": "270 watts per MHz"},
          {"HAAT_up_to_2000m": "160 watts per MHz"}
        ]
      }
    },
    "Mobile_Stations": {
      "Max_eirp": "2 watts"
    }
  }
})";

// ---------------------------------------------------------------------------
// Synthetic retrieval corpora

struct LabeledSet {
    std::vector<Chunk> chunks;
    std::vector<std::pair<std::string, std::string>> keyword;     // (query, expected chunk id)
    std::vector<std::pair<std::string, std::string>> paraphrase;  // (query, expected chunk id)
};

/// 500 chunks over 50 documents of filler vocabulary. Keyword needles carry a
/// unique token; their queries are that token plus two filler words.
/// Paraphrase needles repeat a private set of topic words drawn from a shared
/// pool; their queries reuse those topic words in another order, one swapped for a
/// pool word the needle lacks, so no query term is unique to the needle.
inline LabeledSet planted_needle_corpus(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    LabeledSet set;
    constexpr std::size_t kDocs = 50, kPerDoc = 10, kFiller = 3000, kPool = 80;
    std::vector<std::size_t> order(kDocs * kPerDoc);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::set<std::size_t> keyword_slots(order.begin(), order.begin() + 50);
    std::set<std::size_t> paraphrase_slots(order.begin() + 50, order.begin() + 100);
    auto pool_word = [&](std::size_t i) { return "topic" + std::to_string(i); };
    std::uniform_int_distribution<std::size_t> pool_pick(0, kPool - 1);

    for (std::size_t d = 0; d < kDocs; ++d) {
        std::string doc_id = "doc" + std::to_string(d);
        for (std::size_t o = 0; o < kPerDoc; ++o) {
            std::size_t slot = d * kPerDoc + o;
            std::vector<std::string> words;
            for (int i = 0; i < 36; ++i) words.push_back(word(rng, kFiller));
            for (int i = 0; i < 2; ++i) words.push_back(pool_word(pool_pick(rng)));  // background pool noise
            std::string id = specqa::chunker::make_chunk_id(doc_id, o);
            if (keyword_slots.count(slot)) {
                std::string needle = "kw" + std::to_string(slot) + "x" + std::to_string(rng() % 997);
                words.push_back(needle);
                set.keyword.emplace_back(needle + " " + words[3] + " " + word(rng, kFiller), id);
            } else if (paraphrase_slots.count(slot)) {
                std::vector<std::string> topic;
                while (topic.size() < 6) {
                    auto w = pool_word(pool_pick(rng));
                    if (std::find(topic.begin(), topic.end(), w) == topic.end()) topic.push_back(w);
                }
                for (int rep = 0; rep < 2; ++rep) words.insert(words.end(), topic.begin(), topic.end());
                std::vector<std::string> q(topic.begin(), topic.end());
                std::shuffle(q.begin(), q.end(), rng);
                std::string other;
                do {
                    other = pool_word(pool_pick(rng));
                } while (std::find(words.begin(), words.end(), other) != words.end());
                q.back() = other;
                std::string query;
                for (const auto& w : q) query += (query.empty() ? "" : " ") + w;
                set.paraphrase.emplace_back(query, id);
            }
            std::shuffle(words.begin(), words.end(), rng);
            std::string text;
            for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
            set.chunks.push_back(make_chunk(doc_id, o, text + "."));
        }
    }
    return set;
}

/// Corpus and questions whose hashed-embedding buckets are disjoint: no
/// question term occurs in the corpus and every cosine is exactly zero.
struct EmptyMatchSet {
    std::vector<specqa::ingest::Document> documents;
    std::vector<std::string> questions;
};

inline EmptyMatchSet empty_match_corpus(std::uint64_t seed, std::size_t dim) {
    std::mt19937_64 rng(seed);
    std::vector<std::string> low, high;
    for (std::size_t i = 0; low.size() < 400 || high.size() < 400; ++i) {
        std::string w = "t" + std::to_string(i);
        auto bucket = specqa::vecindex::hash_bucket(w, dim);
        (bucket < dim / 2 ? low : high).push_back(w);
    }
    auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };
    EmptyMatchSet set;
    for (int d = 0; d < 8; ++d) {
        std::string raw = "# " + pick(low) + " " + pick(low) + "\n\n";
        for (int p = 0; p < 6; ++p) {
            for (int w = 0; w < 25; ++w) raw += pick(low) + " ";
            raw += ".\n\n";
        }
        raw += pick(low) + "|" + pick(low) + "\n" + pick(low) + "|" + pick(low) + "\n";
        set.documents.push_back(specqa::ingest::parse_marked_text(raw, "doc" + std::to_string(d)));
    }
    for (int q = 0; q < 100; ++q) {
        std::string question;
        int n = 2 + static_cast<int>(rng() % 6);
        for (int w = 0; w < n; ++w) question += pick(high) + " ";
        set.questions.push_back(question + "?");
    }
    return set;
}

}  // namespace testkit
