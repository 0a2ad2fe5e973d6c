#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cmas/types.hpp"

namespace cmas {

// ---------------------------------------------------------------------------
// Tolerant value scanner. Model output is messy: single quotes, backticks,
// code fences, trailing prose, unescaped apostrophes. All parsers here are
// total: they return a value for every input string and never throw.
// ---------------------------------------------------------------------------

namespace tolerant {

struct Value {
    enum class Kind { String, Array, Object };
    Kind kind = Kind::String;
    std::string str;
    std::vector<Value> items;                               // Array
    std::vector<std::pair<std::string, Value>> fields;      // Object
};

class Scanner {
public:
    explicit Scanner(std::string_view text) : text_(text) {}

    /// Parses the array starting at `pos` (text_[pos] must be '[').
    std::optional<Value> parse_array_at(std::size_t pos) {
        pos_ = pos;
        auto v = parse_array();
        return v;
    }

private:
    std::string_view text_;
    std::size_t pos_ = 0;

    bool eof() const { return pos_ >= text_.size(); }
    char peek() const { return text_[pos_]; }
    void skip_ws() {
        while (!eof() && std::isspace(static_cast<unsigned char>(peek()))) ++pos_;
    }
    char next_meaningful(std::size_t from) const {
        while (from < text_.size() && std::isspace(static_cast<unsigned char>(text_[from]))) {
            ++from;
        }
        return from < text_.size() ? text_[from] : '\0';
    }

    static bool is_delimiter(char c) {
        return c == ',' || c == ':' || c == ']' || c == '}' || c == '\0';
    }

    std::optional<Value> parse_array() {
        if (eof() || peek() != '[') return std::nullopt;
        ++pos_;
        Value out;
        out.kind = Value::Kind::Array;
        skip_ws();
        if (!eof() && peek() == ']') {
            ++pos_;
            return out;
        }
        while (true) {
            skip_ws();
            auto item = parse_value();
            if (!item) return std::nullopt;
            out.items.push_back(std::move(*item));
            skip_ws();
            if (eof()) return std::nullopt;
            if (peek() == ',') {
                ++pos_;
                skip_ws();
                if (!eof() && peek() == ']') {  // trailing comma
                    ++pos_;
                    return out;
                }
                continue;
            }
            if (peek() == ']') {
                ++pos_;
                return out;
            }
            return std::nullopt;
        }
    }

    std::optional<Value> parse_object() {
        if (eof() || peek() != '{') return std::nullopt;
        ++pos_;
        Value out;
        out.kind = Value::Kind::Object;
        skip_ws();
        if (!eof() && peek() == '}') {
            ++pos_;
            return out;
        }
        while (true) {
            skip_ws();
            auto key = parse_value();
            if (!key || key->kind != Value::Kind::String) return std::nullopt;
            skip_ws();
            if (eof() || peek() != ':') return std::nullopt;
            ++pos_;
            skip_ws();
            auto val = parse_value();
            if (!val) return std::nullopt;
            out.fields.emplace_back(std::move(key->str), std::move(*val));
            skip_ws();
            if (eof()) return std::nullopt;
            if (peek() == ',') {
                ++pos_;
                skip_ws();
                if (!eof() && peek() == '}') {
                    ++pos_;
                    return out;
                }
                continue;
            }
            if (peek() == '}') {
                ++pos_;
                return out;
            }
            return std::nullopt;
        }
    }

    std::optional<Value> parse_value() {
        if (eof()) return std::nullopt;
        char c = peek();
        if (c == '[') return parse_array();
        if (c == '{') return parse_object();
        if (c == '"' || c == '\'' || c == '`') return parse_quoted(c);
        return parse_bareword();
    }

    /// Quoted string. For ' and ` quotes the closer must sit in delimiter
    /// context, so unescaped apostrophes inside ('cover's artwork') survive.
    std::optional<Value> parse_quoted(char quote) {
        ++pos_;
        Value out;
        out.kind = Value::Kind::String;
        while (!eof()) {
            char c = peek();
            if (c == '\\' && pos_ + 1 < text_.size()) {
                char esc = text_[pos_ + 1];
                if (esc == 'n') out.str.push_back('\n');
                else if (esc == 't') out.str.push_back('\t');
                else out.str.push_back(esc);
                pos_ += 2;
                continue;
            }
            if (c == quote) {
                if (quote == '"' || is_delimiter(next_meaningful(pos_ + 1))) {
                    ++pos_;
                    return out;
                }
            }
            out.str.push_back(c);
            ++pos_;
        }
        return std::nullopt;  // unterminated
    }

    std::optional<Value> parse_bareword() {
        Value out;
        out.kind = Value::Kind::String;
        while (!eof() && !is_delimiter(peek()) && peek() != '[' && peek() != '{') {
            out.str.push_back(peek());
            ++pos_;
        }
        while (!out.str.empty() && std::isspace(static_cast<unsigned char>(out.str.back()))) {
            out.str.pop_back();
        }
        if (out.str.empty()) return std::nullopt;
        return out;
    }
};

/// Finds the first parsable array in free text. `want_objects` prefers an
/// array containing at least one object (entity answers) over other arrays;
/// `want_strings` prefers string items (TRF lists). An empty array is kept as
/// a fallback so "[]" answers parse.
inline std::optional<Value> first_array(std::string_view text, bool want_objects,
                                        bool want_strings) {
    Scanner scanner(text);
    std::optional<Value> fallback;
    for (std::size_t pos = 0; pos < text.size(); ++pos) {
        if (text[pos] != '[') continue;
        auto v = scanner.parse_array_at(pos);
        if (!v) continue;
        bool has_object = std::any_of(v->items.begin(), v->items.end(), [](const Value& i) {
            return i.kind == Value::Kind::Object;
        });
        bool has_string = std::any_of(v->items.begin(), v->items.end(), [](const Value& i) {
            return i.kind == Value::Kind::String;
        });
        if ((want_objects && has_object) || (want_strings && has_string)) return v;
        if (!fallback) fallback = std::move(v);
    }
    return fallback;
}

}  // namespace tolerant

// ---------------------------------------------------------------------------
// Mention localization
// ---------------------------------------------------------------------------

inline std::vector<std::string> split_whitespace(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

/// Leftmost token-subsequence match of the mention, case-sensitive first,
/// then case-insensitive. No match -> nullopt (OOD mention).
inline std::optional<EntitySpan> locate_mention(const std::string& mention,
                                                const Sentence& sentence) {
    auto needle = split_whitespace(mention);
    if (needle.empty() || needle.size() > sentence.tokens.size()) return std::nullopt;
    auto match_from = [&](bool fold_case) -> std::optional<EntitySpan> {
        for (std::size_t i = 0; i + needle.size() <= sentence.tokens.size(); ++i) {
            bool ok = true;
            for (std::size_t j = 0; j < needle.size(); ++j) {
                const std::string& tok = sentence.tokens[i + j];
                if (fold_case ? to_lower(tok) != to_lower(needle[j]) : tok != needle[j]) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                return EntitySpan{static_cast<int>(i), static_cast<int>(i + needle.size())};
            }
        }
        return std::nullopt;
    };
    if (auto span = match_from(false)) return span;
    return match_from(true);
}

// ---------------------------------------------------------------------------
// parse_entity_json
// ---------------------------------------------------------------------------

struct ParsedEntities {
    std::vector<Entity> located;       // unique (span, type), sorted
    std::vector<RawMention> unlocated; // OOD mentions, kept for evaluation
    std::vector<std::string> notes;

    bool empty() const { return located.empty() && unlocated.empty(); }
};

/// Extracts [{'Entity Name': 'Entity Label'}, ...] answers from raw model
/// text. Mentions absent from the sentence are kept as span-less OOD-mention
/// records; types outside the label set are kept and flagged as OOD types
/// downstream (membership is re-checked against the label set by consumers).
inline ParsedEntities parse_entity_json(const std::string& raw, const LabelSet& label_set,
                                        const Sentence& sentence) {
    ParsedEntities out;
    auto array = tolerant::first_array(raw, /*want_objects=*/true, /*want_strings=*/false);
    if (!array) {
        out.notes.push_back("unparseable");
        return out;
    }
    std::set<std::tuple<int, int, std::string>> seen_located;
    std::set<std::pair<std::string, std::string>> seen_unlocated;
    for (const auto& item : array->items) {
        if (item.kind != tolerant::Value::Kind::Object) continue;
        for (const auto& [mention, value] : item.fields) {
            if (value.kind != tolerant::Value::Kind::String) continue;
            if (mention.empty()) {
                out.notes.push_back("empty mention skipped");
                continue;
            }
            EntityType type{value.str};
            if (!label_set.contains(type)) {
                out.notes.push_back("OOD type: " + type.name);
            }
            if (auto span = locate_mention(mention, sentence)) {
                if (seen_located.insert({span->start, span->end, type.name}).second) {
                    Entity e;
                    e.span = *span;
                    e.type = type;
                    e.surface = span->surface(sentence);
                    out.located.push_back(std::move(e));
                }
            } else {
                out.notes.push_back("OOD mention: " + mention);
                if (seen_unlocated.insert({mention, type.name}).second) {
                    out.unlocated.push_back(RawMention{mention, type});
                }
            }
        }
    }
    std::sort(out.located.begin(), out.located.end(),
              [](const Entity& a, const Entity& b) { return a.key() < b.key(); });
    return out;
}

/// Canonical answer serialization, the single-quoted shape the prompts show.
inline std::string quote_single(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    out.push_back('\'');
    return out;
}

inline std::string entities_to_prompt_json(const std::vector<Entity>& entities) {
    std::string out = "[";
    for (std::size_t i = 0; i < entities.size(); ++i) {
        if (i > 0) out += ", ";
        out += "{" + quote_single(entities[i].surface) + ": " +
               quote_single(entities[i].type.name) + "}";
    }
    out += "]";
    return out;
}

inline std::string string_list_to_prompt(const std::vector<std::string>& items) {
    std::string out = "[";
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i > 0) out += ", ";
        out += quote_single(items[i]);
    }
    out += "]";
    return out;
}

// ---------------------------------------------------------------------------
// parse_trf_list
// ---------------------------------------------------------------------------

struct ParsedStringList {
    std::vector<std::string> items;  // deduplicated, order preserved
    std::vector<std::string> notes;
};

/// Extracts ['TRF1', 'TRF2', ...] answers: first bracketed list of quoted
/// strings, deduplicated with order preserved.
inline ParsedStringList parse_trf_list(const std::string& raw) {
    ParsedStringList out;
    auto array = tolerant::first_array(raw, /*want_objects=*/false, /*want_strings=*/true);
    if (!array) {
        out.notes.push_back("unparseable");
        return out;
    }
    std::set<std::string> seen;
    for (const auto& item : array->items) {
        if (item.kind != tolerant::Value::Kind::String) {
            out.notes.push_back("non-string list item skipped");
            continue;
        }
        if (item.str.empty()) continue;
        if (seen.insert(item.str).second) out.items.push_back(item.str);
    }
    return out;
}

// ---------------------------------------------------------------------------
// parse_score_json
// ---------------------------------------------------------------------------

struct ParsedScores {
    std::map<std::string, int> scores;  // id -> clamped score
    std::vector<std::string> notes;
};

/// Extracts [{'sentence id': 'helpfulness score'}, ...] answers. Scores clamp
/// to [1, 5]; ids missing from the response get `default_score`; extra ids
/// are ignored with a note.
inline ParsedScores parse_score_json(const std::string& raw,
                                     const std::vector<std::string>& expected_ids,
                                     int default_score) {
    ParsedScores out;
    std::set<std::string> expected(expected_ids.begin(), expected_ids.end());

    auto read_int = [](const std::string& s) -> std::optional<int> {
        std::size_t i = 0;
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        bool negative = false;
        if (i < s.size() && (s[i] == '-' || s[i] == '+')) negative = s[i++] == '-';
        std::size_t digits_from = i;
        long long v = 0;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
            if (v < 1000000) v = v * 10 + (s[i] - '0');
            ++i;
        }
        if (i == digits_from) return std::nullopt;
        return static_cast<int>(negative ? -v : v);
    };

    auto array = tolerant::first_array(raw, /*want_objects=*/true, /*want_strings=*/false);
    std::vector<std::pair<std::string, tolerant::Value>> pairs;
    if (array) {
        for (const auto& item : array->items) {
            if (item.kind != tolerant::Value::Kind::Object) continue;
            for (const auto& f : item.fields) pairs.push_back(f);
        }
    } else {
        // Tolerate a bare {'1': '5', ...} object without the array wrapper.
        for (std::size_t pos = 0; pos < raw.size(); ++pos) {
            if (raw[pos] != '{') continue;
            std::string wrapped = "[" + raw.substr(pos) + "]";
            auto v = tolerant::first_array(wrapped, true, false);
            if (v && !v->items.empty() && v->items[0].kind == tolerant::Value::Kind::Object) {
                for (const auto& f : v->items[0].fields) pairs.push_back(f);
                break;
            }
        }
        if (pairs.empty()) out.notes.push_back("unparseable");
    }

    for (const auto& [id, value] : pairs) {
        if (!expected.count(id)) {
            out.notes.push_back("extra id ignored: " + id);
            continue;
        }
        std::optional<int> score;
        if (value.kind == tolerant::Value::Kind::String) score = read_int(value.str);
        if (!score) {
            out.notes.push_back("invalid score for id " + id + ", default used");
            continue;
        }
        out.scores[id] = std::clamp(*score, 1, 5);
    }
    for (const auto& id : expected_ids) {
        if (!out.scores.count(id)) out.scores[id] = default_score;
    }
    return out;
}

}  // namespace cmas
