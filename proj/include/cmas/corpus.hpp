#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmas/types.hpp"

namespace cmas {

using json = nlohmann::ordered_json;

struct LoadResult {
    std::vector<AnnotatedSentence> sentences;
    std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// JSON-lines record schema:
//   {"id": str, "tokens": [str], "entities": [{"start": int, "end": int, "type": str}]}
// Optional fields: "text" (source raw text), per-entity "surface"/"votes",
// "raw_mentions", "sc_score", "provenance", "n_responses".
// ---------------------------------------------------------------------------

inline json sentence_to_record(const AnnotatedSentence& s) {
    json rec;
    rec["id"] = s.sentence.id;
    rec["tokens"] = s.sentence.tokens;
    if (s.sentence.raw_text != join_tokens(s.sentence.tokens, 0, s.sentence.tokens.size())) {
        rec["text"] = s.sentence.raw_text;
    }
    json ents = json::array();
    for (const auto& e : s.entities) {
        json je = {{"start", e.span.start}, {"end", e.span.end}, {"type", e.type.name}};
        je["surface"] = e.surface;
        if (e.votes > 0) je["votes"] = e.votes;
        ents.push_back(std::move(je));
    }
    rec["entities"] = std::move(ents);
    if (!s.raw_mentions.empty()) {
        json raws = json::array();
        for (const auto& r : s.raw_mentions) {
            json jr = {{"surface", r.surface}, {"type", r.type.name}};
            if (r.votes > 0) jr["votes"] = r.votes;
            raws.push_back(std::move(jr));
        }
        rec["raw_mentions"] = std::move(raws);
    }
    if (s.provenance != Provenance::gold) rec["provenance"] = to_string(s.provenance);
    if (s.sc_score) rec["sc_score"] = *s.sc_score;
    if (s.n_responses > 0) rec["n_responses"] = s.n_responses;
    return rec;
}

inline AnnotatedSentence sentence_from_record(const json& rec, const LabelSet& label_set,
                                              bool validate_types,
                                              const std::string& fallback_id,
                                              std::vector<std::string>* warnings) {
    std::string id = rec.contains("id") ? rec.at("id").get<std::string>() : fallback_id;
    if (!rec.contains("tokens") || !rec.at("tokens").is_array()) {
        throw ValidationError("record " + id + ": missing tokens array");
    }
    std::vector<std::string> tokens = rec.at("tokens").get<std::vector<std::string>>();
    std::string text = rec.value("text", std::string{});

    AnnotatedSentence out;
    out.sentence = Sentence(id, std::move(tokens), text);
    if (rec.contains("provenance")) {
        out.provenance = provenance_from_string(rec.at("provenance").get<std::string>());
    }
    if (rec.contains("sc_score")) out.sc_score = rec.at("sc_score").get<double>();
    if (rec.contains("n_responses")) out.n_responses = rec.at("n_responses").get<int>();

    for (const auto& je : rec.value("entities", json::array())) {
        Entity e;
        e.span.start = je.at("start").get<int>();
        e.span.end = je.at("end").get<int>();
        if (!e.span.valid_for(out.sentence)) {
            throw ValidationError("record " + id + ": span [" + std::to_string(e.span.start) +
                                  "," + std::to_string(e.span.end) + ") out of bounds for " +
                                  std::to_string(out.sentence.size()) + " tokens");
        }
        e.type.name = je.at("type").get<std::string>();
        if (validate_types && !label_set.contains(e.type)) {
            throw ValidationError("record " + id + ": unknown entity type " + e.type.name);
        }
        e.surface = e.span.surface(out.sentence);
        e.votes = je.value("votes", 0);
        out.entities.push_back(std::move(e));
    }
    for (const auto& jr : rec.value("raw_mentions", json::array())) {
        RawMention r;
        r.surface = jr.at("surface").get<std::string>();
        r.type.name = jr.at("type").get<std::string>();
        r.votes = jr.value("votes", 0);
        out.raw_mentions.push_back(std::move(r));
    }

    out.sort_entities();

    // Flatten nesting to outermost spans; drop exact duplicate (span, type) pairs.
    std::vector<Entity> kept;
    int dropped_nested = 0, dropped_dup = 0;
    for (const auto& e : out.entities) {
        bool contained = false;
        for (const auto& o : out.entities) {
            if (o.span != e.span && o.span.start <= e.span.start && e.span.end <= o.span.end) {
                contained = true;
                break;
            }
        }
        if (contained) {
            ++dropped_nested;
            continue;
        }
        if (!kept.empty() && kept.back().same_key(e)) {
            ++dropped_dup;
            continue;
        }
        kept.push_back(e);
    }
    if (warnings && dropped_nested > 0) {
        warnings->push_back("record " + id + ": flattened " + std::to_string(dropped_nested) +
                            " nested span(s) to outermost");
    }
    if (warnings && dropped_dup > 0) {
        warnings->push_back("record " + id + ": dropped " + std::to_string(dropped_dup) +
                            " duplicate (span, type) pair(s)");
    }
    out.entities = std::move(kept);
    return out;
}

inline LoadResult load_jsonl(const std::filesystem::path& path, const LabelSet& label_set,
                             const std::string& id_prefix = "", bool validate_types = true) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    LoadResult result;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                                  ": malformed JSON: " + e.what());
        }
        // Header lines carry store metadata, not sentences.
        if (rec.contains("_meta")) continue;
        std::string fallback = id_prefix + std::to_string(line_no);
        try {
            result.sentences.push_back(sentence_from_record(rec, label_set, validate_types,
                                                            fallback, &result.warnings));
        } catch (const ValidationError& e) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return result;
}

inline void save_jsonl(const std::filesystem::path& path,
                       const std::vector<AnnotatedSentence>& sentences,
                       std::optional<json> meta = std::nullopt) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    if (meta) out << json{{"_meta", *meta}}.dump() << "\n";
    for (const auto& s : sentences) out << sentence_to_record(s).dump() << "\n";
}

/// Reads the "_meta" header of a store file, if present.
inline std::optional<json> read_jsonl_meta(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    std::string line;
    if (!std::getline(in, line) || line.empty()) return std::nullopt;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.contains("_meta")) return std::nullopt;
    return rec.at("_meta");
}

// ---------------------------------------------------------------------------
// BIO tagging
// ---------------------------------------------------------------------------

/// Decodes BIO/BIO2 tags into spans. Orphan I- tags (no preceding B/I of the
/// same type) are promoted to B- and reported through `warnings`.
inline std::vector<std::pair<EntitySpan, std::string>> bio_to_spans(
    const std::vector<std::string>& tags, std::vector<std::string>* warnings = nullptr,
    const std::string& context = "") {
    std::vector<std::pair<EntitySpan, std::string>> spans;
    int open_start = -1;
    std::string open_type;
    auto close = [&](int end) {
        if (open_start >= 0) spans.push_back({EntitySpan{open_start, end}, open_type});
        open_start = -1;
        open_type.clear();
    };
    for (int i = 0; i < static_cast<int>(tags.size()); ++i) {
        const std::string& tag = tags[i];
        if (tag == "O") {
            close(i);
            continue;
        }
        if (tag.size() < 3 || tag[1] != '-' || (tag[0] != 'B' && tag[0] != 'I')) {
            throw ValidationError(context + ": unrecognized tag " + tag);
        }
        std::string type = tag.substr(2);
        if (tag[0] == 'B') {
            close(i);
            open_start = i;
            open_type = type;
        } else {  // I-
            if (open_start >= 0 && open_type == type) continue;
            // Orphan I-: treat as B-, never drop the token.
            if (warnings) {
                warnings->push_back(context + ": orphan I-" + type + " at token " +
                                    std::to_string(i) + " treated as B-" + type);
            }
            close(i);
            open_start = i;
            open_type = type;
        }
    }
    close(static_cast<int>(tags.size()));
    return spans;
}

inline std::vector<std::string> spans_to_bio(std::size_t n_tokens,
                                             const std::vector<Entity>& entities) {
    std::vector<std::string> tags(n_tokens, "O");
    for (const auto& e : entities) {
        tags[static_cast<std::size_t>(e.span.start)] = "B-" + e.type.name;
        for (int i = e.span.start + 1; i < e.span.end; ++i) {
            tags[static_cast<std::size_t>(i)] = "I-" + e.type.name;
        }
    }
    return tags;
}

/// Token-per-line BIO importer. Whitespace-separated columns, tag in the last
/// column, blank line between sentences. `tag_map` renames tag suffixes to
/// label-set names (e.g. LOC -> Location).
inline LoadResult load_conll(const std::filesystem::path& path, const LabelSet& label_set,
                             const std::string& id_prefix = "",
                             const std::map<std::string, std::string>& tag_map = {}) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    LoadResult result;
    std::vector<std::string> tokens, tags;
    std::string line;
    int line_no = 0, sentence_no = 0;

    auto flush = [&]() {
        if (tokens.empty()) return;
        ++sentence_no;
        if (tokens.size() == 1 && tokens[0] == "-DOCSTART-") {
            tokens.clear();
            tags.clear();
            --sentence_no;
            return;
        }
        std::string id = id_prefix + std::to_string(sentence_no);
        AnnotatedSentence s;
        s.sentence = Sentence(id, tokens);
        for (auto& [span, tag_type] : bio_to_spans(tags, &result.warnings, id)) {
            Entity e;
            e.span = span;
            auto it = tag_map.find(tag_type);
            e.type.name = it == tag_map.end() ? tag_type : it->second;
            if (!label_set.contains(e.type)) {
                throw ValidationError(path.string() + " sentence " + id +
                                      ": unknown entity type " + e.type.name);
            }
            e.surface = e.span.surface(s.sentence);
            s.entities.push_back(std::move(e));
        }
        s.sort_entities();
        result.sentences.push_back(std::move(s));
        tokens.clear();
        tags.clear();
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream cols(line);
        std::vector<std::string> fields;
        std::string f;
        while (cols >> f) fields.push_back(f);
        if (fields.empty()) {
            flush();
            continue;
        }
        if (fields.size() < 2 && fields[0] != "-DOCSTART-") {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                                  ": expected token and tag columns");
        }
        tokens.push_back(fields.front());
        tags.push_back(fields.size() > 1 ? fields.back() : "O");
    }
    flush();
    return result;
}

// ---------------------------------------------------------------------------
// Experiment protocol sampling
// ---------------------------------------------------------------------------

struct ProtocolSample {
    std::vector<Sentence> unlabeled;                   // labels stripped
    std::vector<std::vector<AnnotatedSentence>> folds; // gold test folds
    std::vector<std::string> warnings;
};

namespace detail {

/// Deterministic sample of `want` distinct indices from [0, pool), ascending.
/// mt19937_64 with modulo reduction keeps the draw identical across platforms.
inline std::vector<std::size_t> sample_indices(std::size_t pool, std::size_t want,
                                               std::mt19937_64& rng) {
    std::vector<std::size_t> idx(pool);
    for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
    for (std::size_t i = 0; i < want; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng() % (pool - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(want);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace detail

/// Test-protocol sampling: `unlabeled_size` train sentences stripped of
/// labels plus `n_folds` independent test folds of `fold_size` sentences.
/// A test set no larger than `fold_size` collapses to a single full fold.
/// Pure function of (dataset, seed).
inline ProtocolSample sample_protocol(const Dataset& dataset, std::uint64_t seed,
                                      std::size_t unlabeled_size = 500,
                                      std::size_t fold_size = 300, int n_folds = 3) {
    ProtocolSample out;
    std::mt19937_64 rng(seed);

    std::vector<std::size_t> train_idx;
    if (dataset.train.size() <= unlabeled_size) {
        if (dataset.train.size() < unlabeled_size) {
            out.warnings.push_back("train has " + std::to_string(dataset.train.size()) +
                                   " sentences; using all as the unlabeled corpus");
        }
        for (std::size_t i = 0; i < dataset.train.size(); ++i) train_idx.push_back(i);
    } else {
        train_idx = detail::sample_indices(dataset.train.size(), unlabeled_size, rng);
    }
    for (auto i : train_idx) out.unlabeled.push_back(dataset.train[i].sentence);

    if (dataset.test.size() <= fold_size) {
        out.folds.push_back(dataset.test);
    } else {
        for (int f = 0; f < n_folds; ++f) {
            std::vector<AnnotatedSentence> fold;
            for (auto i : detail::sample_indices(dataset.test.size(), fold_size, rng)) {
                fold.push_back(dataset.test[i]);
            }
            out.folds.push_back(std::move(fold));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset manifest:
//   {"name": str, "labels": [str], "format": "jsonl" | "conll",
//    "train": path, "test": path, "tag_map": {tag: label}?}
// Split paths are resolved relative to the manifest file.
// ---------------------------------------------------------------------------

inline Dataset load_manifest(const std::filesystem::path& manifest_path,
                             std::vector<std::string>* warnings = nullptr) {
    std::ifstream in(manifest_path);
    if (!in) throw ConfigError("cannot open manifest " + manifest_path.string());
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("manifest " + manifest_path.string() + ": " + e.what());
    }
    Dataset ds;
    ds.name = m.value("name", manifest_path.stem().string());
    if (!m.contains("labels")) throw ConfigError("manifest: missing labels");
    ds.label_set = LabelSet::from_names(m.at("labels").get<std::vector<std::string>>());
    std::string format = m.value("format", "jsonl");
    std::map<std::string, std::string> tag_map;
    if (m.contains("tag_map")) {
        tag_map = m.at("tag_map").get<std::map<std::string, std::string>>();
    }

    auto base = manifest_path.parent_path();
    auto load_split = [&](const std::string& key) -> std::vector<AnnotatedSentence> {
        if (!m.contains(key)) throw ConfigError("manifest: missing " + key + " path");
        auto p = base / m.at(key).get<std::string>();
        LoadResult r = format == "conll" ? load_conll(p, ds.label_set, key + "-", tag_map)
                                         : load_jsonl(p, ds.label_set, key + "-");
        if (warnings) {
            warnings->insert(warnings->end(), r.warnings.begin(), r.warnings.end());
        }
        return std::move(r.sentences);
    };
    ds.train = load_split("train");
    ds.test = load_split("test");
    return ds;
}

}  // namespace cmas
