#pragma once

#include <iostream>
#include <mutex>
#include <string>
#include <vector>

#include "cmas/gateway.hpp"
#include "cmas/llm_parsing.hpp"
#include "cmas/parallel.hpp"
#include "cmas/types.hpp"
#include "cmas/voting.hpp"

namespace cmas {

inline std::string label_set_to_prompt(const LabelSet& label_set) {
    std::vector<std::string> names;
    names.reserve(label_set.size());
    for (const auto& t : label_set.types()) names.push_back(t.name);
    return string_list_to_prompt(names);
}

/// Zero-shot annotation prompt: label set, instruction, JSON-format clause,
/// empty-list clause, the text, and the answer cue.
inline std::vector<ChatMessage> build_annotation_prompt(const Sentence& sentence,
                                                        const LabelSet& label_set) {
    if (label_set.empty()) throw Error("build_annotation_prompt: empty label set");
    std::string body;
    body += "Given entity label set: " + label_set_to_prompt(label_set) +
            ", please recognize the named entities in the given text. "
            "Provide the answer in the following JSON format: "
            "[{'Entity Name': 'Entity Label'}]. "
            "If there is no entity in the text, return the following empty list: [].\n";
    body += "\n";
    body += "Text: " + sentence.raw_text + "\n";
    body += "Answer:";
    return {user_message(std::move(body))};
}

/// Applies the sampled responses of one sentence: parse each, vote, and wrap
/// the outcome as a self-annotated sentence.
inline AnnotatedSentence annotate_from_samples(const Sentence& sentence,
                                               const std::vector<std::string>& samples,
                                               const LabelSet& label_set) {
    std::vector<ParsedEntities> parsed;
    parsed.reserve(samples.size());
    for (const auto& raw : samples) parsed.push_back(parse_entity_json(raw, label_set, sentence));
    VoteOutcome vote = two_stage_majority_vote(parsed, label_set);

    AnnotatedSentence out;
    out.sentence = sentence;
    out.entities = std::move(vote.entities);
    out.raw_mentions = std::move(vote.raw_mentions);
    out.provenance = Provenance::self_annotated;
    out.sc_score = vote.sc_score;
    out.n_responses = vote.n_responses;
    return out;
}

struct AnnotateResult {
    std::vector<AnnotatedSentence> annotated;  // input order, failures skipped
    std::vector<std::string> warnings;
};

/// Annotates the unlabeled corpus: one prompt per sentence, n sampled
/// responses, two-stage majority voting. A per-sentence backend failure skips
/// that sentence and the batch continues.
inline AnnotateResult annotate_corpus(const std::vector<Sentence>& unlabeled,
                                      const LabelSet& label_set, LlmGateway& gateway,
                                      const SamplingParams& params, int concurrency = 1) {
    std::vector<std::optional<AnnotatedSentence>> slots(unlabeled.size());
    std::vector<std::string> errors(unlabeled.size());
    parallel_for(unlabeled.size(), concurrency, [&](std::size_t i) {
        try {
            auto prompt = build_annotation_prompt(unlabeled[i], label_set);
            CompletionBatch batch = gateway.complete_n(prompt, params);
            slots[i] = annotate_from_samples(unlabeled[i], batch.samples, label_set);
        } catch (const BackendError& e) {
            errors[i] = e.what();
        } catch (const ScriptingError& e) {
            errors[i] = e.what();
        }
    });

    AnnotateResult result;
    for (std::size_t i = 0; i < unlabeled.size(); ++i) {
        if (slots[i]) {
            result.annotated.push_back(std::move(*slots[i]));
        } else {
            result.warnings.push_back("annotation skipped for sentence " + unlabeled[i].id +
                                      ": " + errors[i]);
        }
    }
    return result;
}

}  // namespace cmas
