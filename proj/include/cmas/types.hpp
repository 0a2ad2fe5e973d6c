#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

namespace cmas {

class Error : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (bad span bounds, unknown gold type, ...).
class ValidationError : public Error {
    using Error::Error;
};

/// Transport or provider failure after retries were exhausted.
class BackendError : public Error {
    using Error::Error;
};

/// Mock backend has no script entry for a requested prompt.
class ScriptingError : public Error {
    using Error::Error;
};

class ConfigError : public Error {
    using Error::Error;
};

inline std::string join_tokens(const std::vector<std::string>& tokens,
                               std::size_t begin, std::size_t end) {
    std::string out;
    for (std::size_t i = begin; i < end; ++i) {
        if (i > begin) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

inline std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

/// Tokenized input text. raw_text is the source text when the dataset
/// provides one, otherwise the tokens joined by single spaces.
struct Sentence {
    std::string id;
    std::vector<std::string> tokens;
    std::string raw_text;

    Sentence() = default;
    Sentence(std::string id_, std::vector<std::string> tokens_, std::string raw = "")
        : id(std::move(id_)), tokens(std::move(tokens_)), raw_text(std::move(raw)) {
        if (tokens.empty()) throw ValidationError("sentence " + id + ": no tokens");
        for (const auto& t : tokens) {
            if (t.empty()) throw ValidationError("sentence " + id + ": empty token");
        }
        if (raw_text.empty()) raw_text = join_tokens(tokens, 0, tokens.size());
    }

    std::size_t size() const { return tokens.size(); }
    bool operator==(const Sentence&) const = default;
};

/// Token-indexed, half-open [start, end). Surface text is derived from the
/// owning sentence, never stored authority.
struct EntitySpan {
    int start = 0;
    int end = 0;

    bool valid_for(const Sentence& s) const {
        return start >= 0 && start < end && end <= static_cast<int>(s.size());
    }
    std::string surface(const Sentence& s) const {
        return join_tokens(s.tokens, static_cast<std::size_t>(start),
                           static_cast<std::size_t>(end));
    }
    auto operator<=>(const EntitySpan&) const = default;
};

struct EntityType {
    std::string name;

    bool operator==(const EntityType&) const = default;
    auto operator<=>(const EntityType&) const = default;
};

/// Ordered set of entity types. Order is stable and used for deterministic
/// tie-breaking in majority voting; membership is checked, never assumed.
class LabelSet {
public:
    LabelSet() = default;
    explicit LabelSet(std::vector<EntityType> types) : types_(std::move(types)) {
        for (std::size_t i = 0; i < types_.size(); ++i) {
            if (types_[i].name.empty()) throw ValidationError("label set: empty type name");
            auto [it, inserted] = index_.emplace(types_[i].name, i);
            if (!inserted) throw ValidationError("label set: duplicate type " + types_[i].name);
        }
    }
    static LabelSet from_names(const std::vector<std::string>& names) {
        std::vector<EntityType> ts;
        ts.reserve(names.size());
        for (const auto& n : names) ts.push_back(EntityType{n});
        return LabelSet(std::move(ts));
    }

    const std::vector<EntityType>& types() const { return types_; }
    std::size_t size() const { return types_.size(); }
    bool empty() const { return types_.empty(); }
    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    bool contains(const EntityType& t) const { return contains(t.name); }

    /// Position in the set, or -1 for out-of-set names.
    int index_of(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : static_cast<int>(it->second);
    }

    bool operator==(const LabelSet& o) const { return types_ == o.types_; }

private:
    std::vector<EntityType> types_;
    std::unordered_map<std::string, std::size_t> index_;
};

enum class Provenance { gold, self_annotated, predicted };

inline std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::gold: return "gold";
        case Provenance::self_annotated: return "self_annotated";
        case Provenance::predicted: return "predicted";
    }
    return "gold";
}

inline Provenance provenance_from_string(const std::string& s) {
    if (s == "gold") return Provenance::gold;
    if (s == "self_annotated") return Provenance::self_annotated;
    if (s == "predicted") return Provenance::predicted;
    throw ValidationError("unknown provenance: " + s);
}

/// One (span, type) pair on a sentence. votes carries the self-consistency
/// vote count when the annotation came out of majority voting; 0 for gold.
struct Entity {
    EntitySpan span;
    EntityType type;
    std::string surface;
    int votes = 0;

    bool same_key(const Entity& o) const { return span == o.span && type == o.type; }
    auto key() const { return std::tie(span.start, span.end, type.name); }
};

/// A predicted mention whose surface could not be located in the sentence
/// token sequence. Kept because the error taxonomy needs OOD mentions.
struct RawMention {
    std::string surface;
    EntityType type;
    int votes = 0;
};

struct AnnotatedSentence {
    Sentence sentence;
    std::vector<Entity> entities;          // sorted by (start, end, type), unique
    std::vector<RawMention> raw_mentions;  // unlocatable predictions, if any
    Provenance provenance = Provenance::gold;
    std::optional<double> sc_score;   // defined for self_annotated and predicted
    int n_responses = 0;              // sampled responses behind the vote, if any

    const std::string& id() const { return sentence.id; }

    void sort_entities() {
        std::sort(entities.begin(), entities.end(),
                  [](const Entity& a, const Entity& b) { return a.key() < b.key(); });
    }
};

struct Dataset {
    std::string name;
    LabelSet label_set;
    std::vector<AnnotatedSentence> train;
    std::vector<AnnotatedSentence> test;
};

}  // namespace cmas
