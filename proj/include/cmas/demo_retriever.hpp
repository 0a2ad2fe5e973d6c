#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "cmas/embedding.hpp"
#include "cmas/types.hpp"

namespace cmas {

struct ScoredDemo {
    AnnotatedSentence demo;
    double similarity = 0.0;  // cosine to the target

    double sc() const { return demo.sc_score.value_or(1.0); }  // gold counts as fully reliable
};

/// Demonstrations selected for one target, ordered by descending sc_score,
/// then descending similarity, then id.
struct DemonstrationSet {
    std::string target_id;
    std::vector<ScoredDemo> demos;
    std::vector<std::string> warnings;
};

/// Prompts render demonstrations in reverse retrieval order so the strongest
/// demo sits last, nearest the question. Prompt position p (1-based) maps to
/// retrieval index k - p; both the builders and the score pairing go through
/// these two helpers.
inline std::vector<std::size_t> prompt_order(std::size_t demo_count) {
    std::vector<std::size_t> order(demo_count);
    for (std::size_t i = 0; i < demo_count; ++i) order[i] = demo_count - 1 - i;
    return order;
}

inline std::size_t prompt_position_to_retrieval_index(std::size_t position_1based,
                                                      std::size_t demo_count) {
    return demo_count - position_1based;
}

/// Diverse nearest neighbors with self-consistency ranking: the K nearest
/// store sentences by cosine similarity (exact duplicates of earlier pool
/// entries excluded when dedup_text is set), then the top k of those by
/// sc_score. Fewer than k available returns all with a warning.
inline DemonstrationSet retrieve(const Sentence& target,
                                 const std::vector<AnnotatedSentence>& store,
                                 EmbeddingService& embedder, int K, int k,
                                 bool dedup_text = true) {
    if (store.empty()) throw Error("retrieve: empty store");
    if (k < 1 || K < 1) throw Error("retrieve: K and k must be positive");
    if (k > K) throw Error("retrieve: k must not exceed K");

    EmbeddingVector target_vec = embedder.embed_text(target.raw_text);
    std::vector<std::pair<std::string, EmbeddingVector>> pool;
    std::map<std::string, std::pair<const AnnotatedSentence*, std::size_t>> by_id;
    pool.reserve(store.size());
    for (const auto& s : store) {
        if (s.id() == target.id) continue;  // never retrieve the target itself
        by_id[s.id()] = {&s, pool.size()};
        pool.emplace_back(s.id(), embedder.embed_text(s.sentence.raw_text));
    }
    if (pool.empty()) throw Error("retrieve: store holds only the target sentence");

    std::vector<std::string> nearest = knn(target_vec, pool, K);

    // K-pool in similarity order, with similarities for ranking below.
    std::vector<ScoredDemo> candidates;
    std::set<std::string> seen_text;
    for (const auto& id : nearest) {
        auto [demo, pool_idx] = by_id.at(id);
        if (dedup_text && !seen_text.insert(demo->sentence.raw_text).second) continue;
        candidates.push_back(ScoredDemo{*demo, cosine(target_vec, pool[pool_idx].second)});
    }

    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const ScoredDemo& a, const ScoredDemo& b) {
                         return std::tuple(-a.sc(), -a.similarity, a.demo.id()) <
                                std::tuple(-b.sc(), -b.similarity, b.demo.id());
                     });

    DemonstrationSet out;
    out.target_id = target.id;
    if (candidates.size() > static_cast<std::size_t>(k)) {
        candidates.resize(static_cast<std::size_t>(k));
    } else if (candidates.size() < static_cast<std::size_t>(k)) {
        out.warnings.push_back("target " + target.id + ": only " +
                               std::to_string(candidates.size()) + " demonstrations available (k=" +
                               std::to_string(k) + ")");
    }
    out.demos = std::move(candidates);
    return out;
}

}  // namespace cmas
