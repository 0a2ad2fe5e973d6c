#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "cmas/llm_parsing.hpp"
#include "cmas/types.hpp"

namespace cmas {

/// Vote bookkeeping for one candidate mention across all sampled responses.
/// Mention identity is the span for located mentions and the surface string
/// for OOD mentions; types are resolved only in stage two.
struct MentionTally {
    bool located = false;
    EntitySpan span;
    std::string surface;
    int presence = 0;                       // responses containing the mention, any type
    std::map<std::string, int> type_votes;  // responses containing (mention, type)

    auto key() const {
        return std::tuple(located ? 0 : 1, located ? span.start : 0, located ? span.end : 0,
                          surface);
    }
};

struct VoteOutcome {
    std::vector<Entity> entities;          // retained located mentions with final types
    std::vector<RawMention> raw_mentions;  // retained OOD mentions with final types
    std::vector<MentionTally> tallies;     // every observed mention, deterministic order
    int n_responses = 0;
    double sc_score = 0.0;
};

/// Two-stage majority voting over parsed response sets.
/// Stage 1: a mention is retained iff it appears (under any type) in strictly
/// more than half of the responses. Stage 2: each retained mention takes its
/// most-voted type; ties break by label-set order, with out-of-set types
/// ranked after in-set ones and ordered by name.
/// sc_score is the mean over retained mentions of votes(final pair)/n; with
/// nothing retained it is the fraction of responses predicting the empty set.
inline VoteOutcome two_stage_majority_vote(const std::vector<ParsedEntities>& responses,
                                           const LabelSet& label_set) {
    if (responses.empty()) throw Error("two_stage_majority_vote: no responses");
    const int n = static_cast<int>(responses.size());

    std::map<std::tuple<int, int, int, std::string>, MentionTally> tally;
    int empty_responses = 0;
    for (const auto& response : responses) {
        if (response.empty()) ++empty_responses;
        std::set<std::tuple<int, int, int, std::string>> seen_mention;
        std::set<std::pair<std::tuple<int, int, int, std::string>, std::string>> seen_pair;
        auto observe = [&](const MentionTally& proto, const std::string& type) {
            auto k = proto.key();
            auto [it, inserted] = tally.emplace(k, proto);
            if (seen_mention.insert(k).second) it->second.presence += 1;
            if (seen_pair.insert({k, type}).second) it->second.type_votes[type] += 1;
        };
        for (const auto& e : response.located) {
            MentionTally proto;
            proto.located = true;
            proto.span = e.span;
            proto.surface = e.surface;
            observe(proto, e.type.name);
        }
        for (const auto& r : response.unlocated) {
            MentionTally proto;
            proto.located = false;
            proto.surface = r.surface;
            observe(proto, r.type.name);
        }
    }

    VoteOutcome out;
    out.n_responses = n;
    double sc_sum = 0.0;
    int retained = 0;
    for (auto& [key, t] : tally) {
        out.tallies.push_back(t);
        if (2 * t.presence <= n) continue;  // "more than half", strictly

        // Most-voted type; ties by label-set order, out-of-set types last.
        auto rank = [&](const std::string& name) {
            int idx = label_set.index_of(name);
            return idx >= 0 ? idx : static_cast<int>(label_set.size());
        };
        const std::string* best = nullptr;
        int best_votes = 0;
        for (const auto& [type, votes] : t.type_votes) {
            if (!best || votes > best_votes ||
                (votes == best_votes &&
                 std::tuple(rank(type), type) < std::tuple(rank(*best), *best))) {
                best = &type;
                best_votes = votes;
            }
        }
        ++retained;
        sc_sum += static_cast<double>(best_votes) / n;
        if (t.located) {
            Entity e;
            e.span = t.span;
            e.type.name = *best;
            e.surface = t.surface;
            e.votes = best_votes;
            out.entities.push_back(std::move(e));
        } else {
            out.raw_mentions.push_back(RawMention{t.surface, EntityType{*best}, best_votes});
        }
    }
    out.sc_score = retained > 0 ? sc_sum / retained
                                : static_cast<double>(empty_responses) / n;

    std::sort(out.entities.begin(), out.entities.end(),
              [](const Entity& a, const Entity& b) { return a.key() < b.key(); });
    std::sort(out.raw_mentions.begin(), out.raw_mentions.end(),
              [](const RawMention& a, const RawMention& b) {
                  return std::tie(a.surface, a.type.name) < std::tie(b.surface, b.type.name);
              });
    return out;
}

}  // namespace cmas
