#pragma once

#include <string>
#include <vector>

#include "cmas/demo_retriever.hpp"
#include "cmas/gateway.hpp"
#include "cmas/llm_parsing.hpp"
#include "cmas/self_annotator.hpp"
#include "cmas/trf.hpp"
#include "cmas/types.hpp"

namespace cmas {

constexpr int kDefaultHelpfulness = 3;  // neutral midpoint for unscored demos

/// Demonstrations with helpfulness scores, in retrieval order.
struct ScoredDemonstrationSet {
    std::string target_id;
    std::vector<std::tuple<AnnotatedSentence, TrfSet, int>> entries;  // demo, TRFs, score 1..5
    std::string prompt_digest;       // ties the scores to the exact prompt
    std::string raw_answer;          // discriminator response, reused by the predictor
    std::vector<std::string> notes;
};

/// Self-reflection prompt: the target with its TRF set inline, the scoring
/// instruction, then one Text / TRF set / Entity labels block per
/// demonstration. Sentence ids are positional (1..k in prompt order).
inline std::vector<ChatMessage> build_discriminator_prompt(
    const Sentence& target, const TrfSet& target_trfs,
    const std::vector<std::pair<AnnotatedSentence, TrfSet>>& demos, const LabelSet& label_set) {
    if (demos.empty()) throw Error("build_discriminator_prompt: no demonstrations");
    std::string body;
    body += "Here, we provide some example sentences and the corresponding entity labels and "
            "TRFs. TRFs mean type-related features, which are tokens that are strongly "
            "associated with the entity types and relevant to these sentences.\n";
    body += "\n";
    body += "Given entity label set: " + label_set_to_prompt(label_set) +
            ", target sentence: '" + target.raw_text + "' and its TRF set:" +
            string_list_to_prompt(target_trfs.features) + ".\n";
    body += "\n";
    body += "Please predict the helpfulness scores of each sentence, which indicates the degree "
            "to which providing the current example can aid in extracting named entities from "
            "the target sentence. The score ranges from 1 to 5, with 1 being the least helpful "
            "and 5 being the most helpful. Provide answer in the following JSON format: "
            "[{'sentence id': 'helpfulness score'}].\n";
    body += "\n";
    for (std::size_t idx : prompt_order(demos.size())) {
        const auto& [demo, trfs] = demos[idx];
        body += "Text: " + demo.sentence.raw_text + "\n";
        body += "TRF set: " + string_list_to_prompt(trfs.features) + "\n";
        body += "Entity labels: " + entities_to_prompt_json(demo.entities) + "\n";
        body += "\n";
    }
    body += "Answer:";
    return {user_message(std::move(body))};
}

/// Scores all k demonstrations with a single call. Missing or invalid ids
/// default to the neutral midpoint; scores clamp to [1, 5]. Scores never
/// filter demonstrations out, they are passed forward verbatim.
inline ScoredDemonstrationSet score_demonstrations(
    const Sentence& target, const TrfSet& target_trfs,
    const std::vector<std::pair<AnnotatedSentence, TrfSet>>& demos, const LabelSet& label_set,
    LlmGateway& gateway, const SamplingParams& params) {
    ScoredDemonstrationSet out;
    out.target_id = target.id;
    const std::size_t k = demos.size();

    std::vector<std::string> expected_ids;
    for (std::size_t p = 1; p <= k; ++p) expected_ids.push_back(std::to_string(p));

    std::vector<int> scores_by_retrieval(k, kDefaultHelpfulness);
    auto prompt = build_discriminator_prompt(target, target_trfs, demos, label_set);
    SamplingParams single = params;
    single.n_samples = 1;
    try {
        CompletionBatch batch = gateway.complete_n(prompt, single);
        out.prompt_digest = batch.prompt_digest;
        out.raw_answer = batch.samples.front();
        ParsedScores parsed = parse_score_json(out.raw_answer, expected_ids, kDefaultHelpfulness);
        out.notes = std::move(parsed.notes);
        for (std::size_t p = 1; p <= k; ++p) {
            scores_by_retrieval[prompt_position_to_retrieval_index(p, k)] =
                parsed.scores.at(std::to_string(p));
        }
    } catch (const BackendError& e) {
        out.notes.push_back(std::string("scoring failed, defaults used: ") + e.what());
    } catch (const ScriptingError& e) {
        out.notes.push_back(std::string("scoring failed, defaults used: ") + e.what());
    }
    if (out.raw_answer.empty()) {
        // Keep the predictor dialogue well-formed even when scoring failed.
        out.prompt_digest = gateway.digest_for(prompt, single);
        std::string answer = "[";
        for (std::size_t p = 1; p <= k; ++p) {
            if (p > 1) answer += ", ";
            answer += "{'" + std::to_string(p) + "': '" + std::to_string(kDefaultHelpfulness) +
                      "'}";
        }
        out.raw_answer = answer + "]";
    }

    for (std::size_t i = 0; i < k; ++i) {
        out.entries.emplace_back(demos[i].first, demos[i].second, scores_by_retrieval[i]);
    }
    return out;
}

}  // namespace cmas
