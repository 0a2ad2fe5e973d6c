#pragma once

#include <string>
#include <vector>

#include "cmas/discriminator.hpp"
#include "cmas/gateway.hpp"
#include "cmas/llm_parsing.hpp"
#include "cmas/self_annotator.hpp"
#include "cmas/types.hpp"
#include "cmas/voting.hpp"

namespace cmas {

/// Question-answering prompt integrating the discriminator dialogue: the
/// discriminator prompt as the first user turn, its answer as the assistant
/// turn, then the final instruction ending at the answer cue.
inline std::vector<ChatMessage> build_predictor_prompt(
    const std::vector<ChatMessage>& discriminator_prompt, const std::string& discriminator_answer,
    const Sentence& target, const LabelSet& label_set) {
    if (discriminator_prompt.empty()) throw Error("build_predictor_prompt: discriminator has not run");
    std::vector<ChatMessage> messages = discriminator_prompt;
    messages.push_back(assistant_message(discriminator_answer));

    std::string body;
    body += "Given entity label set: " + label_set_to_prompt(label_set) +
            ", please consider the TRFs and helpfulness scores for the above sentences to "
            "recognize the named entities in the target sentence. "
            "Provide the answer in the following JSON format: "
            "[{'Entity Name': 'Entity Label'}]. "
            "If there is no entity in the text, return the following empty list: [].\n";
    body += "\n";
    body += "Target sentence: " + target.raw_text + "\n";
    body += "Answer:";
    messages.push_back(user_message(std::move(body)));
    return messages;
}

struct Prediction {
    AnnotatedSentence annotated;  // provenance = predicted
    bool failed = false;          // gateway failure, empty prediction emitted
    std::vector<std::string> notes;
};

/// Final per-target prediction: n sampled responses over the dialogue prompt,
/// aggregated with the same two-stage majority voting as self-annotation.
/// One fixed discriminator answer is reused; only the final turn is sampled.
inline Prediction predict(const Sentence& target,
                          const std::vector<ChatMessage>& discriminator_prompt,
                          const std::string& discriminator_answer, const LabelSet& label_set,
                          LlmGateway& gateway, const SamplingParams& params) {
    Prediction out;
    out.annotated.sentence = target;
    out.annotated.provenance = Provenance::predicted;
    auto prompt =
        build_predictor_prompt(discriminator_prompt, discriminator_answer, target, label_set);
    try {
        CompletionBatch batch = gateway.complete_n(prompt, params);
        std::vector<ParsedEntities> parsed;
        parsed.reserve(batch.samples.size());
        for (const auto& raw : batch.samples) {
            parsed.push_back(parse_entity_json(raw, label_set, target));
        }
        VoteOutcome vote = two_stage_majority_vote(parsed, label_set);
        out.annotated.entities = std::move(vote.entities);
        out.annotated.raw_mentions = std::move(vote.raw_mentions);
        out.annotated.sc_score = vote.sc_score;
        out.annotated.n_responses = vote.n_responses;
    } catch (const BackendError& e) {
        // Failure leaves sc_score unset, which is how downstream stages and
        // reloaded artifacts distinguish a failed prediction from an empty one.
        out.failed = true;
        out.notes.push_back(std::string("prediction failed: ") + e.what());
    } catch (const ScriptingError& e) {
        out.failed = true;
        out.notes.push_back(std::string("prediction failed: ") + e.what());
    }
    return out;
}

}  // namespace cmas
