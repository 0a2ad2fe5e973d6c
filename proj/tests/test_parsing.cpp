#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "cmas/llm_parsing.hpp"

using namespace cmas;

namespace {

const LabelSet kLabels = LabelSet::from_names({"Location", "Person", "Organization"});
const Sentence kParis("s1", {"Paris", "is", "big"});

}  // namespace

TEST_CASE("parse_entity_json extracts well-formed answers") {
    auto parsed = parse_entity_json("[{'Paris': 'Location'}]", kLabels, kParis);
    REQUIRE(parsed.located.size() == 1);
    CHECK(parsed.located[0].span == EntitySpan{0, 1});
    CHECK(parsed.located[0].type.name == "Location");
    CHECK(parsed.unlocated.empty());
}

TEST_CASE("parse_entity_json tolerates fences, prose, and empty answers") {
    SECTION("code-fenced empty list") {
        auto parsed = parse_entity_json("Sure! ```json\n[]\n```", kLabels, kParis);
        CHECK(parsed.located.empty());
        CHECK(parsed.unlocated.empty());
        CHECK(parsed.notes.empty());
    }
    SECTION("double quotes and trailing prose") {
        auto parsed = parse_entity_json(
            "Here you go: [{\"Paris\": \"Location\"}] hope that helps!", kLabels, kParis);
        REQUIRE(parsed.located.size() == 1);
    }
    SECTION("unescaped apostrophe inside a single-quoted mention") {
        Sentence s("s2", {"The", "album", "cover's", "artwork"});
        auto parsed = parse_entity_json("[{'cover's artwork': 'Organization'}]", kLabels, s);
        REQUIRE(parsed.located.size() == 1);
        CHECK(parsed.located[0].surface == "cover's artwork");
    }
    SECTION("nothing parseable") {
        auto parsed = parse_entity_json("I could not find entities.", kLabels, kParis);
        CHECK(parsed.located.empty());
        REQUIRE_FALSE(parsed.notes.empty());
        CHECK(parsed.notes[0] == "unparseable");
    }
}

TEST_CASE("parse_entity_json keeps OOD records") {
    SECTION("OOD type on a locatable mention") {
        auto parsed = parse_entity_json("[{'Paris': 'City'}]", kLabels, kParis);
        REQUIRE(parsed.located.size() == 1);
        CHECK(parsed.located[0].type.name == "City");
        CHECK_FALSE(kLabels.contains(parsed.located[0].type));
    }
    SECTION("OOD mention kept as span-less record") {
        auto parsed = parse_entity_json("[{'Atlantis': 'City'}]", kLabels, kParis);
        CHECK(parsed.located.empty());
        REQUIRE(parsed.unlocated.size() == 1);
        CHECK(parsed.unlocated[0].surface == "Atlantis");
        CHECK(parsed.unlocated[0].type.name == "City");
    }
}

TEST_CASE("mention localization prefers leftmost case-sensitive matches") {
    Sentence s("s3", {"paris", "loves", "Paris", "and", "Paris"});
    SECTION("case-sensitive wins over an earlier case-insensitive match") {
        auto span = locate_mention("Paris", s);
        REQUIRE(span.has_value());
        CHECK(*span == EntitySpan{2, 3});
    }
    SECTION("case-insensitive fallback") {
        auto span = locate_mention("PARIS", s);
        REQUIRE(span.has_value());
        CHECK(*span == EntitySpan{0, 1});
    }
    SECTION("multi-token mentions") {
        Sentence t("s4", {"New", "York", "City"});
        auto span = locate_mention("New York", t);
        REQUIRE(span.has_value());
        CHECK(*span == EntitySpan{0, 2});
    }
    SECTION("absent mention") {
        CHECK_FALSE(locate_mention("Rome", s).has_value());
    }
}

TEST_CASE("parse_trf_list extracts deduplicated string lists") {
    SECTION("paper-style answer") {
        auto parsed = parse_trf_list("['video', 'tracks']");
        CHECK(parsed.items == std::vector<std::string>{"video", "tracks"});
    }
    SECTION("empty list") {
        CHECK(parse_trf_list("[]").items.empty());
    }
    SECTION("dedup and trailing prose") {
        auto parsed = parse_trf_list("TRFs: ['a','a','b'] thanks");
        CHECK(parsed.items == std::vector<std::string>{"a", "b"});
    }
    SECTION("unparseable") {
        auto parsed = parse_trf_list("no list here");
        CHECK(parsed.items.empty());
        REQUIRE_FALSE(parsed.notes.empty());
    }
}

TEST_CASE("parse_score_json clamps, defaults, and ignores extras") {
    SECTION("direct parse") {
        auto parsed = parse_score_json("[{'1': '5'}, {'2': '2'}]", {"1", "2"}, 3);
        CHECK(parsed.scores.at("1") == 5);
        CHECK(parsed.scores.at("2") == 2);
    }
    SECTION("clamp above and below") {
        CHECK(parse_score_json("[{'1': '9'}]", {"1"}, 3).scores.at("1") == 5);
        CHECK(parse_score_json("[{'1': '0'}]", {"1"}, 3).scores.at("1") == 1);
    }
    SECTION("missing id gets the default") {
        auto parsed = parse_score_json("[{'1': '4'}]", {"1", "2"}, 3);
        CHECK(parsed.scores.at("2") == 3);
    }
    SECTION("garbage gives everyone the default") {
        auto parsed = parse_score_json("garbage", {"1", "2"}, 3);
        CHECK(parsed.scores.at("1") == 3);
        CHECK(parsed.scores.at("2") == 3);
        REQUIRE_FALSE(parsed.notes.empty());
    }
    SECTION("extra ids ignored with note") {
        auto parsed = parse_score_json("[{'1': '4'}, {'7': '2'}]", {"1"}, 3);
        CHECK(parsed.scores.size() == 1);
        REQUIRE_FALSE(parsed.notes.empty());
    }
    SECTION("bare object and numeric values tolerated") {
        auto parsed = parse_score_json("{'1': 4, '2': 1}", {"1", "2"}, 3);
        CHECK(parsed.scores.at("1") == 4);
        CHECK(parsed.scores.at("2") == 1);
    }
}

TEST_CASE("parsers are total on arbitrary text") {
    std::mt19937_64 rng(99);
    const std::string alphabet = "[]{}'\":`,. abcXYZ\\\n0987";
    for (int trial = 0; trial < 3000; ++trial) {
        std::string noise;
        int len = static_cast<int>(rng() % 60);
        for (int i = 0; i < len; ++i) noise.push_back(alphabet[rng() % alphabet.size()]);
        CHECK_NOTHROW(parse_entity_json(noise, kLabels, kParis));
        CHECK_NOTHROW(parse_trf_list(noise));
        CHECK_NOTHROW(parse_score_json(noise, {"1", "2"}, 3));
    }
}

TEST_CASE("reparsing the canonical serialization is the identity") {
    std::mt19937_64 rng(3);
    std::vector<std::string> types = {"Location", "Person", "Organization"};
    for (int trial = 0; trial < 200; ++trial) {
        int len = 2 + static_cast<int>(rng() % 8);
        std::vector<std::string> tokens;
        for (int i = 0; i < len; ++i) {
            tokens.push_back("w" + std::to_string(rng() % 50) + (rng() % 5 == 0 ? "'s" : ""));
        }
        // Entity tokens are unique sentinels so each mention localizes back to
        // its own span (repeated surfaces would collapse to the leftmost match).
        std::vector<Entity> pending;
        int pos = 0;
        while (pos < len) {
            if (rng() % 2 == 0) {
                int width = 1 + static_cast<int>(rng() % 2);
                if (pos + width > len) break;
                for (int j = 0; j < width; ++j) {
                    tokens[static_cast<std::size_t>(pos + j)] =
                        "ent" + std::to_string(pos) + "x" + std::to_string(j) +
                        (rng() % 4 == 0 ? "'s" : "");
                }
                Entity e;
                e.span = {pos, pos + width};
                e.type.name = types[rng() % types.size()];
                pending.push_back(e);
                pos += width + 1;
            } else {
                ++pos;
            }
        }
        Sentence s("r", tokens);
        std::vector<Entity> unique;
        for (auto e : pending) {
            e.surface = e.span.surface(s);
            unique.push_back(e);
        }

        std::string canonical = entities_to_prompt_json(unique);
        auto parsed = parse_entity_json(canonical, kLabels, s);
        REQUIRE(parsed.unlocated.empty());
        REQUIRE(parsed.located.size() == unique.size());
        std::sort(unique.begin(), unique.end(),
                  [](const Entity& a, const Entity& b) { return a.key() < b.key(); });
        for (std::size_t i = 0; i < unique.size(); ++i) {
            CHECK(parsed.located[i].span == unique[i].span);
            CHECK(parsed.located[i].type == unique[i].type);
        }
    }
}
