#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "cmas/demo_retriever.hpp"
#include "cmas/embedding.hpp"
#include "cmas/gateway.hpp"
#include "cmas/llm_parsing.hpp"
#include "cmas/self_annotator.hpp"
#include "cmas/types.hpp"

namespace cmas {

/// Ranked type-related feature strings for a sentence or an entity type.
struct TrfSet {
    std::string owner;  // sentence id or entity type name
    std::vector<std::string> features;
    std::vector<std::string> notes;
};

/// m-gram counts per entity type over the annotated corpus. For every gram w
/// and type t, per_type[t][w] + complement[t][w] equals the total corpus
/// count of w: a sentence contributes its full gram multiset to per_type[t]
/// when an entity of type t appears in it, and to complement[t] otherwise.
struct NgramCounts {
    int m = 1;
    std::map<std::string, std::map<std::string, int>> per_type;
    std::map<std::string, std::map<std::string, int>> complement;
};

inline std::vector<std::string> sentence_ngrams(const Sentence& sentence, int m) {
    std::vector<std::string> grams;
    if (m < 1 || sentence.tokens.size() < static_cast<std::size_t>(m)) return grams;
    for (std::size_t i = 0; i + static_cast<std::size_t>(m) <= sentence.tokens.size(); ++i) {
        std::string gram;
        for (int j = 0; j < m; ++j) {
            if (j > 0) gram.push_back(' ');
            gram += to_lower(sentence.tokens[i + static_cast<std::size_t>(j)]);
        }
        grams.push_back(std::move(gram));
    }
    return grams;
}

/// Occurrence counts of lowercased m-grams, split per type into the
/// sentences where the type appears versus the rest of the corpus.
inline NgramCounts count_ngrams(const std::vector<AnnotatedSentence>& store,
                                const LabelSet& label_set, int m = 1) {
    if (m < 1) throw Error("count_ngrams: m must be >= 1");
    NgramCounts counts;
    counts.m = m;
    for (const auto& t : label_set.types()) {
        counts.per_type[t.name];
        counts.complement[t.name];
    }
    for (const auto& s : store) {
        std::map<std::string, int> grams;
        for (auto& g : sentence_ngrams(s.sentence, m)) grams[g] += 1;
        std::set<std::string> types_present;
        for (const auto& e : s.entities) {
            if (label_set.contains(e.type)) types_present.insert(e.type.name);
        }
        for (const auto& t : label_set.types()) {
            auto& dest = types_present.count(t.name) ? counts.per_type[t.name]
                                                     : counts.complement[t.name];
            for (const auto& [gram, c] : grams) dest[gram] += c;
        }
    }
    return counts;
}

/// Frequency-ratio filter: w belongs to the TRF set of type t iff it occurs
/// in the type's sentences and complement_count / type_count <= rho.
/// Features are ordered by ascending ratio, then ascending gram.
inline std::map<std::string, TrfSet> filter_trfs(const NgramCounts& counts, double rho) {
    if (rho < 1.0) throw Error("filter_trfs: rho must be >= 1");
    std::map<std::string, TrfSet> out;
    for (const auto& [type, type_counts] : counts.per_type) {
        std::vector<std::pair<double, std::string>> kept;
        auto comp_it = counts.complement.find(type);
        for (const auto& [gram, c_type] : type_counts) {
            if (c_type <= 0) continue;
            int c_comp = 0;
            if (comp_it != counts.complement.end()) {
                auto it = comp_it->second.find(gram);
                if (it != comp_it->second.end()) c_comp = it->second;
            }
            double ratio = static_cast<double>(c_comp) / c_type;
            if (ratio <= rho) kept.emplace_back(ratio, gram);
        }
        std::sort(kept.begin(), kept.end());
        TrfSet set;
        set.owner = type;
        for (auto& [ratio, gram] : kept) set.features.push_back(std::move(gram));
        out.emplace(type, std::move(set));
    }
    return out;
}

/// Pseudo TRF labels for a demonstration: candidates are the mined features
/// of the types present in the demo (all types when it has no entities); the
/// top `max_features` by minimum embedding distance to any demo token win,
/// ties by ascending feature string.
inline TrfSet assign_pseudo_labels(const AnnotatedSentence& demo,
                                   const std::map<std::string, TrfSet>& trf_by_type,
                                   EmbeddingService& embedder, std::size_t max_features = 5) {
    TrfSet out;
    out.owner = demo.id();

    std::set<std::string> candidate_set;
    std::set<std::string> demo_types;
    for (const auto& e : demo.entities) demo_types.insert(e.type.name);
    for (const auto& [type, set] : trf_by_type) {
        if (!demo_types.empty() && !demo_types.count(type)) continue;
        candidate_set.insert(set.features.begin(), set.features.end());
    }
    if (candidate_set.empty()) {
        out.notes.push_back("demo " + demo.id() + ": empty pseudo-label candidate pool");
        return out;
    }

    // Token embeddings reuse the text embedder on single (lowercased) token
    // strings, matching the normalization used during mining.
    std::vector<EmbeddingVector> token_vecs;
    token_vecs.reserve(demo.sentence.tokens.size());
    for (const auto& tok : demo.sentence.tokens) {
        token_vecs.push_back(embedder.embed_text(to_lower(tok)));
    }

    std::vector<std::pair<double, std::string>> scored;
    for (const auto& w : candidate_set) {
        EmbeddingVector wv = embedder.embed_text(w);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& tv : token_vecs) best = std::min(best, euclidean(wv, tv));
        scored.emplace_back(best, w);
    }
    std::sort(scored.begin(), scored.end());
    for (std::size_t i = 0; i < scored.size() && i < max_features; ++i) {
        out.features.push_back(scored[i].second);
    }
    return out;
}

/// Specialized ICL prompt for TRF extraction. Demonstrations arrive in
/// retrieval order and are rendered in prompt order (strongest last).
inline std::vector<ChatMessage> build_trf_prompt(
    const Sentence& target, const std::vector<std::pair<AnnotatedSentence, TrfSet>>& demos,
    const LabelSet& label_set) {
    if (demos.empty()) throw Error("build_trf_prompt: no demonstrations");
    std::string body;
    body += "Here, we provide some example sentences with the corresponding TRFs. "
            "TRFs mean type-related features, which are tokens that are strongly associated "
            "with the entity types and relevant to these sentences.\n";
    body += "\n";
    body += "Given entity label set: " + label_set_to_prompt(label_set) +
            ", please identify the TRFs for the target sentences. "
            "Provide the answer in the following list format: ['TRF1', 'TRF2', ...].\n";
    body += "\n";
    for (std::size_t idx : prompt_order(demos.size())) {
        const auto& [demo, trfs] = demos[idx];
        body += "Text: " + demo.sentence.raw_text + "\n";
        body += "TRF set: " + string_list_to_prompt(trfs.features) + "\n";
        body += "\n";
    }
    body += "Target sentence: " + target.raw_text + "\n";
    body += "TRF set:";
    return {user_message(std::move(body))};
}

/// One extraction call for the target's TRF set. Gateway failure yields an
/// empty TrfSet with a note; the pipeline proceeds.
inline TrfSet extract_trfs(const Sentence& target,
                           const std::vector<std::pair<AnnotatedSentence, TrfSet>>& demos,
                           const LabelSet& label_set, LlmGateway& gateway,
                           const SamplingParams& params) {
    TrfSet out;
    out.owner = target.id;
    try {
        auto prompt = build_trf_prompt(target, demos, label_set);
        SamplingParams single = params;
        single.n_samples = 1;
        CompletionBatch batch = gateway.complete_n(prompt, single);
        ParsedStringList parsed = parse_trf_list(batch.samples.front());
        out.features = std::move(parsed.items);
        out.notes = std::move(parsed.notes);
    } catch (const BackendError& e) {
        out.notes.push_back(std::string("extraction failed: ") + e.what());
    } catch (const ScriptingError& e) {
        out.notes.push_back(std::string("extraction failed: ") + e.what());
    }
    return out;
}

}  // namespace cmas
