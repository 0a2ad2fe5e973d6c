#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "cmas/voting.hpp"

using namespace cmas;

namespace {

const LabelSet kLabels = LabelSet::from_names({"Location", "Organization", "Person"});

/// A response as a list of (mention index, type index) pairs over a fixed
/// mention pool; -1 type never appears (absence is expressed by omission).
using AbstractResponse = std::vector<std::pair<int, int>>;

const std::vector<std::string> kMentions = {"alpha", "beta", "gamma", "delta"};

ParsedEntities materialize(const AbstractResponse& response) {
    // Mention i becomes a located span [i, i+1) so identities stay distinct.
    ParsedEntities out;
    for (auto [m, t] : response) {
        Entity e;
        e.span = {m, m + 1};
        e.type = kLabels.types()[static_cast<std::size_t>(t)];
        e.surface = kMentions[static_cast<std::size_t>(m)];
        out.located.push_back(e);
    }
    return out;
}

/// Independent brute-force vote counter over abstract responses. Counts are
/// recomputed from scratch with plain loops.
struct OracleEntity {
    int mention;
    int type;
    int votes;
};
struct OracleOutcome {
    std::vector<OracleEntity> retained;  // sorted by mention
    double sc_score;
};

OracleOutcome vote_oracle(const std::vector<AbstractResponse>& responses, int n_mentions,
                          int n_types) {
    int n = static_cast<int>(responses.size());
    OracleOutcome out{{}, 0.0};
    double sc_sum = 0.0;
    for (int m = 0; m < n_mentions; ++m) {
        int presence = 0;
        std::vector<int> type_votes(static_cast<std::size_t>(n_types), 0);
        for (const auto& response : responses) {
            bool here = false;
            std::vector<bool> typed(static_cast<std::size_t>(n_types), false);
            for (auto [rm, rt] : response) {
                if (rm != m) continue;
                here = true;
                typed[static_cast<std::size_t>(rt)] = true;
            }
            if (here) ++presence;
            for (int t = 0; t < n_types; ++t) {
                if (typed[static_cast<std::size_t>(t)]) ++type_votes[static_cast<std::size_t>(t)];
            }
        }
        if (presence * 2 <= n) continue;
        int best_type = 0;
        for (int t = 1; t < n_types; ++t) {
            if (type_votes[static_cast<std::size_t>(t)] > type_votes[static_cast<std::size_t>(best_type)]) {
                best_type = t;  // ties keep the lower label index
            }
        }
        out.retained.push_back({m, best_type, type_votes[static_cast<std::size_t>(best_type)]});
        sc_sum += static_cast<double>(type_votes[static_cast<std::size_t>(best_type)]) / n;
    }
    if (out.retained.empty()) {
        int empties = 0;
        for (const auto& r : responses) {
            if (r.empty()) ++empties;
        }
        out.sc_score = static_cast<double>(empties) / n;
    } else {
        out.sc_score = sc_sum / static_cast<double>(out.retained.size());
    }
    return out;
}

bool matches_oracle(const std::vector<AbstractResponse>& responses, int n_mentions, int n_types) {
    std::vector<ParsedEntities> parsed;
    parsed.reserve(responses.size());
    for (const auto& r : responses) parsed.push_back(materialize(r));
    VoteOutcome vote = two_stage_majority_vote(parsed, kLabels);
    OracleOutcome oracle = vote_oracle(responses, n_mentions, n_types);

    if (vote.entities.size() != oracle.retained.size()) return false;
    for (std::size_t i = 0; i < oracle.retained.size(); ++i) {
        const auto& got = vote.entities[i];
        const auto& want = oracle.retained[i];
        if (got.span.start != want.mention) return false;
        if (got.type != kLabels.types()[static_cast<std::size_t>(want.type)]) return false;
        if (got.votes != want.votes) return false;
    }
    return std::abs(vote.sc_score - oracle.sc_score) < 1e-12;
}

ParsedEntities parse_pairs(std::initializer_list<std::pair<const char*, const char*>> pairs,
                           const Sentence& sentence) {
    ParsedEntities out;
    for (const auto& [mention, type] : pairs) {
        if (auto span = locate_mention(mention, sentence)) {
            Entity e;
            e.span = *span;
            e.type.name = type;
            e.surface = span->surface(sentence);
            out.located.push_back(e);
        } else {
            out.unlocated.push_back(RawMention{mention, EntityType{type}});
        }
    }
    return out;
}

}  // namespace

TEST_CASE("unanimous responses retain everything with sc 1.0") {
    Sentence s("x", {"Paris", "shone"});
    std::vector<ParsedEntities> responses(5, parse_pairs({{"Paris", "Location"}}, s));
    VoteOutcome vote = two_stage_majority_vote(responses, kLabels);
    REQUIRE(vote.entities.size() == 1);
    CHECK(vote.entities[0].surface == "Paris");
    CHECK(vote.entities[0].type.name == "Location");
    CHECK(vote.sc_score == 1.0);
}

TEST_CASE("stage-two type resolution follows the majority") {
    Sentence s("x", {"Paris", "shone"});
    // "Paris" in 3 of 5 responses: twice Location, once Organization.
    std::vector<ParsedEntities> responses = {
        parse_pairs({{"Paris", "Location"}}, s),
        parse_pairs({{"Paris", "Location"}}, s),
        parse_pairs({{"Paris", "Organization"}}, s),
        parse_pairs({}, s),
        parse_pairs({}, s),
    };
    VoteOutcome vote = two_stage_majority_vote(responses, kLabels);
    REQUIRE(vote.entities.size() == 1);
    CHECK(vote.entities[0].type.name == "Location");
    CHECK(vote.entities[0].votes == 2);
    CHECK(vote.sc_score == Catch::Approx(2.0 / 5.0));
}

TEST_CASE("a mention in exactly half of the responses is dropped") {
    Sentence s("x", {"Paris", "and", "Rome"});
    std::vector<ParsedEntities> responses = {
        parse_pairs({{"Rome", "Location"}}, s), parse_pairs({{"Rome", "Location"}}, s),
        parse_pairs({}, s), parse_pairs({}, s), parse_pairs({}, s),
    };
    // 2 of 5 is not more than half
    CHECK(two_stage_majority_vote(responses, kLabels).entities.empty());

    std::vector<ParsedEntities> even = {
        parse_pairs({{"Rome", "Location"}}, s), parse_pairs({{"Rome", "Location"}}, s),
        parse_pairs({}, s), parse_pairs({}, s),
    };
    CHECK(two_stage_majority_vote(even, kLabels).entities.empty());
}

TEST_CASE("type ties break by label-set order") {
    Sentence s("x", {"Acme"});
    std::vector<ParsedEntities> responses = {
        parse_pairs({{"Acme", "Organization"}}, s),
        parse_pairs({{"Acme", "Location"}}, s),
        parse_pairs({{"Acme", "Organization"}}, s),
        parse_pairs({{"Acme", "Location"}}, s),
        parse_pairs({{"Acme", "Location"}}, s),  // 3x Location beats 2x Organization
    };
    CHECK(two_stage_majority_vote(responses, kLabels).entities[0].type.name == "Location");

    std::vector<ParsedEntities> tied = {
        parse_pairs({{"Acme", "Organization"}}, s),
        parse_pairs({{"Acme", "Location"}}, s),
        parse_pairs({{"Acme", "Organization"}}, s),
        parse_pairs({{"Acme", "Location"}}, s),
    };
    // 2 vs 2: Location precedes Organization in the label set
    auto vote = two_stage_majority_vote(tied, kLabels);
    REQUIRE(vote.entities.size() == 1);
    CHECK(vote.entities[0].type.name == "Location");
}

TEST_CASE("unparseable responses count as empty-set agreement") {
    Sentence s("x", {"quiet"});
    std::vector<ParsedEntities> responses(5);
    for (auto& r : responses) r.notes.push_back("unparseable");
    VoteOutcome vote = two_stage_majority_vote(responses, kLabels);
    CHECK(vote.entities.empty());
    CHECK(vote.sc_score == 1.0);
}

TEST_CASE("OOD mentions participate in voting as surface-keyed mentions") {
    Sentence s("x", {"quiet", "today"});
    std::vector<ParsedEntities> responses = {
        parse_pairs({{"Atlantis", "Location"}}, s),
        parse_pairs({{"Atlantis", "Location"}}, s),
        parse_pairs({{"Atlantis", "Location"}}, s),
        parse_pairs({}, s),
        parse_pairs({}, s),
    };
    VoteOutcome vote = two_stage_majority_vote(responses, kLabels);
    CHECK(vote.entities.empty());
    REQUIRE(vote.raw_mentions.size() == 1);
    CHECK(vote.raw_mentions[0].surface == "Atlantis");
    CHECK(vote.raw_mentions[0].votes == 3);
}

TEST_CASE("voting is invariant to response order and duplication") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        int n = 1 + static_cast<int>(rng() % 6);
        std::vector<AbstractResponse> responses;
        for (int r = 0; r < n; ++r) {
            AbstractResponse resp;
            for (int m = 0; m < 3; ++m) {
                if (rng() % 2 == 0) resp.push_back({m, static_cast<int>(rng() % 3)});
            }
            responses.push_back(resp);
        }
        auto parsed = [&](const std::vector<AbstractResponse>& rs) {
            std::vector<ParsedEntities> ps;
            for (const auto& r : rs) ps.push_back(materialize(r));
            return two_stage_majority_vote(ps, kLabels);
        };
        VoteOutcome base = parsed(responses);

        auto shuffled = responses;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        VoteOutcome permuted = parsed(shuffled);
        CHECK(base.entities.size() == permuted.entities.size());
        CHECK(base.sc_score == Catch::Approx(permuted.sc_score).margin(1e-12));
        for (std::size_t i = 0; i < base.entities.size(); ++i) {
            CHECK(base.entities[i].span == permuted.entities[i].span);
            CHECK(base.entities[i].type == permuted.entities[i].type);
        }

        auto doubled = responses;
        doubled.insert(doubled.end(), responses.begin(), responses.end());
        VoteOutcome twice = parsed(doubled);
        REQUIRE(twice.entities.size() == base.entities.size());
        for (std::size_t i = 0; i < base.entities.size(); ++i) {
            CHECK(base.entities[i].span == twice.entities[i].span);
            CHECK(base.entities[i].type == twice.entities[i].type);
        }
    }
}

TEST_CASE("sc_score stays within [0,1] and unanimity implies 1") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 500; ++trial) {
        int n = 1 + static_cast<int>(rng() % 7);
        std::vector<AbstractResponse> responses;
        for (int r = 0; r < n; ++r) {
            AbstractResponse resp;
            for (int m = 0; m < 4; ++m) {
                if (rng() % 3 == 0) resp.push_back({m, static_cast<int>(rng() % 3)});
            }
            responses.push_back(resp);
        }
        std::vector<ParsedEntities> parsed;
        for (const auto& r : responses) parsed.push_back(materialize(r));
        VoteOutcome vote = two_stage_majority_vote(parsed, kLabels);
        CHECK(vote.sc_score >= 0.0);
        CHECK(vote.sc_score <= 1.0);
    }

    // Identical non-empty responses agree exactly -> sc 1.0.
    std::vector<AbstractResponse> same(6, AbstractResponse{{0, 1}, {2, 2}});
    std::vector<ParsedEntities> parsed;
    for (const auto& r : same) parsed.push_back(materialize(r));
    CHECK(two_stage_majority_vote(parsed, kLabels).sc_score == 1.0);
}

TEST_CASE("voting matches the brute-force oracle exhaustively") {
    // Exhaustive families, graded so the whole sweep stays fast: every
    // response assigns each mention one of {absent, T0, T1, T2}.
    struct Family {
        int mentions;
        int types;
        int n;
    };
    const std::vector<Family> families = {
        {1, 3, 5}, {2, 2, 4}, {2, 3, 3}, {3, 2, 3},
    };
    for (const auto& fam : families) {
        int choices = fam.types + 1;
        int per_response = 1;
        for (int m = 0; m < fam.mentions; ++m) per_response *= choices;
        long long total = 1;
        for (int r = 0; r < fam.n; ++r) total *= per_response;
        for (long long code = 0; code < total; ++code) {
            long long rest = code;
            std::vector<AbstractResponse> responses;
            for (int r = 0; r < fam.n; ++r) {
                long long rcode = rest % per_response;
                rest /= per_response;
                AbstractResponse resp;
                for (int m = 0; m < fam.mentions; ++m) {
                    int choice = static_cast<int>(rcode % choices);
                    rcode /= choices;
                    if (choice > 0) resp.push_back({m, choice - 1});
                }
                responses.push_back(resp);
            }
            if (!matches_oracle(responses, fam.mentions, fam.types)) {
                CAPTURE(fam.mentions, fam.types, fam.n, code);
                FAIL("vote outcome diverged from the brute-force oracle");
            }
        }
    }
    SUCCEED("all exhaustive families matched the oracle");
}
