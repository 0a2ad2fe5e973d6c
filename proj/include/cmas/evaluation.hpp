#pragma once

#include <algorithm>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmas/types.hpp"

namespace cmas {

struct F1Report {
    long long true_positives = 0;
    long long false_positives = 0;
    long long false_negatives = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;

    static F1Report from_counts(long long tp, long long fp, long long fn) {
        F1Report r{tp, fp, fn, 0.0, 0.0, 0.0};
        r.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        r.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        r.f1 = r.precision + r.recall > 0
                   ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                   : 0.0;
        return r;
    }

    nlohmann::ordered_json to_json() const {
        return {{"true_positives", true_positives}, {"false_positives", false_positives},
                {"false_negatives", false_negatives}, {"precision", precision},
                {"recall", recall}, {"f1", f1}};
    }
};

/// Exact-match micro F1: a prediction counts only when boundary and type both
/// match. Only located predictions enter the FP count; OOD mentions are
/// handled by the error taxonomy.
inline F1Report micro_f1(const std::vector<AnnotatedSentence>& gold,
                         const std::vector<AnnotatedSentence>& pred) {
    if (gold.size() != pred.size()) throw Error("micro_f1: gold/pred size mismatch");
    long long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i].id() != pred[i].id()) {
            throw Error("micro_f1: id mismatch at index " + std::to_string(i) + " (" +
                        gold[i].id() + " vs " + pred[i].id() + ")");
        }
        std::set<std::tuple<int, int, std::string>> gold_keys;
        for (const auto& g : gold[i].entities) gold_keys.insert(g.key());
        for (const auto& p : pred[i].entities) {
            if (gold_keys.count(p.key())) ++tp;
            else ++fp;
        }
        std::set<std::tuple<int, int, std::string>> pred_keys;
        for (const auto& p : pred[i].entities) pred_keys.insert(p.key());
        for (const auto& g : gold[i].entities) {
            if (!pred_keys.count(g.key())) ++fn;
        }
    }
    return F1Report::from_counts(tp, fp, fn);
}

// ---------------------------------------------------------------------------
// Error taxonomy
// ---------------------------------------------------------------------------

enum class ErrorCategory {
    ood_type,          // predicted type outside the label set
    wrong_type,        // exact boundary, incorrect in-set type
    contain_gold,      // prediction strictly contains a gold mention
    contained_by_gold, // prediction strictly contained by a gold mention
    overlap_with_gold, // other partial overlap with a gold mention
    completely_o,      // no overlap with any gold mention
    ood_mention,       // predicted surface absent from the input text
    omitted_mention,   // gold mention with no exact-match prediction
};

inline const std::vector<std::pair<ErrorCategory, std::string>>& error_category_names() {
    static const std::vector<std::pair<ErrorCategory, std::string>> names = {
        {ErrorCategory::ood_type, "ood_type"},
        {ErrorCategory::wrong_type, "wrong_type"},
        {ErrorCategory::contain_gold, "contain_gold"},
        {ErrorCategory::contained_by_gold, "contained_by_gold"},
        {ErrorCategory::overlap_with_gold, "overlap_with_gold"},
        {ErrorCategory::completely_o, "completely_o"},
        {ErrorCategory::ood_mention, "ood_mention"},
        {ErrorCategory::omitted_mention, "omitted_mention"},
    };
    return names;
}

inline std::string to_string(ErrorCategory c) {
    for (const auto& [cat, name] : error_category_names()) {
        if (cat == c) return name;
    }
    return "unknown";
}

struct ErrorRecord {
    ErrorCategory category;
    std::string sentence_id;
    std::optional<EntitySpan> predicted_span;
    std::optional<EntityType> predicted_type;
    std::string predicted_surface;  // set for predictions, incl. OOD mentions
    std::optional<EntitySpan> gold_span;
    std::optional<EntityType> gold_type;
};

struct ErrorAnalysis {
    std::vector<ErrorRecord> records;
    std::map<ErrorCategory, long long> histogram;
};

/// Classifies every non-TP prediction into exactly one category, applying the
/// precedence: OOD mention, OOD type, wrong type, contain gold, contained by
/// gold, overlap with gold, completely-O. Boundary categories compare against
/// the maximally overlapping gold span (ties by earliest gold start). Every
/// gold mention with no exact match yields one omitted_mention record.
inline ErrorAnalysis classify_errors(const std::vector<AnnotatedSentence>& gold,
                                     const std::vector<AnnotatedSentence>& pred,
                                     const LabelSet& label_set) {
    if (gold.size() != pred.size()) throw Error("classify_errors: gold/pred size mismatch");
    ErrorAnalysis out;
    for (const auto& [cat, name] : error_category_names()) out.histogram[cat] = 0;

    auto add = [&](ErrorRecord rec) {
        out.histogram[rec.category] += 1;
        out.records.push_back(std::move(rec));
    };

    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i].id() != pred[i].id()) {
            throw Error("classify_errors: id mismatch at index " + std::to_string(i));
        }
        const auto& g_entities = gold[i].entities;
        std::set<std::tuple<int, int, std::string>> gold_keys;
        for (const auto& g : g_entities) gold_keys.insert(g.key());

        for (const auto& r : pred[i].raw_mentions) {
            ErrorRecord rec;
            rec.category = ErrorCategory::ood_mention;
            rec.sentence_id = pred[i].id();
            rec.predicted_surface = r.surface;
            rec.predicted_type = r.type;
            add(std::move(rec));
        }

        for (const auto& p : pred[i].entities) {
            if (gold_keys.count(p.key())) continue;  // exact match, not an error
            ErrorRecord rec;
            rec.sentence_id = pred[i].id();
            rec.predicted_span = p.span;
            rec.predicted_type = p.type;
            rec.predicted_surface = p.surface;

            if (!label_set.contains(p.type)) {
                rec.category = ErrorCategory::ood_type;
                add(std::move(rec));
                continue;
            }

            // Exact boundary with a gold mention: the type must be wrong.
            const Entity* same_span = nullptr;
            for (const auto& g : g_entities) {
                if (g.span == p.span && (!same_span || g.key() < same_span->key())) {
                    same_span = &g;
                }
            }
            if (same_span) {
                rec.category = ErrorCategory::wrong_type;
                rec.gold_span = same_span->span;
                rec.gold_type = same_span->type;
                add(std::move(rec));
                continue;
            }

            // Maximally overlapping gold span, ties by earliest gold start.
            const Entity* best = nullptr;
            int best_overlap = 0;
            for (const auto& g : g_entities) {
                int overlap = std::min(p.span.end, g.span.end) -
                              std::max(p.span.start, g.span.start);
                if (overlap <= 0) continue;
                if (overlap > best_overlap ||
                    (overlap == best_overlap && best && g.key() < best->key())) {
                    best = &g;
                    best_overlap = overlap;
                }
            }
            if (!best) {
                rec.category = ErrorCategory::completely_o;
            } else {
                rec.gold_span = best->span;
                rec.gold_type = best->type;
                bool p_contains_g = p.span.start <= best->span.start &&
                                    best->span.end <= p.span.end && p.span != best->span;
                bool g_contains_p = best->span.start <= p.span.start &&
                                    p.span.end <= best->span.end && p.span != best->span;
                if (p_contains_g) rec.category = ErrorCategory::contain_gold;
                else if (g_contains_p) rec.category = ErrorCategory::contained_by_gold;
                else rec.category = ErrorCategory::overlap_with_gold;
            }
            add(std::move(rec));
        }

        std::set<std::tuple<int, int, std::string>> pred_keys;
        for (const auto& p : pred[i].entities) pred_keys.insert(p.key());
        for (const auto& g : g_entities) {
            if (pred_keys.count(g.key())) continue;
            ErrorRecord rec;
            rec.category = ErrorCategory::omitted_mention;
            rec.sentence_id = gold[i].id();
            rec.gold_span = g.span;
            rec.gold_type = g.type;
            add(std::move(rec));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json error_report_json(const ErrorAnalysis& analysis) {
    nlohmann::ordered_json counts;
    long long total = 0;
    for (const auto& [cat, name] : error_category_names()) {
        counts[name] = analysis.histogram.at(cat);
        total += analysis.histogram.at(cat);
    }
    nlohmann::ordered_json percentages;
    for (const auto& [cat, name] : error_category_names()) {
        percentages[name] =
            total > 0 ? 100.0 * static_cast<double>(analysis.histogram.at(cat)) / total : 0.0;
    }
    return {{"counts", counts}, {"total", total}, {"percentages", percentages}};
}

/// Plain-text table with the row labels used in the error-type breakdown.
inline std::string error_report_text(const ErrorAnalysis& analysis) {
    static const std::vector<std::tuple<std::string, std::string, ErrorCategory>> rows = {
        {"Type", "OOD types", ErrorCategory::ood_type},
        {"", "Wrong types", ErrorCategory::wrong_type},
        {"Boundary", "Contain gold", ErrorCategory::contain_gold},
        {"", "Contained by gold", ErrorCategory::contained_by_gold},
        {"", "Overlap with gold", ErrorCategory::overlap_with_gold},
        {"", "Completely-Os", ErrorCategory::completely_o},
        {"", "OOD mentions", ErrorCategory::ood_mention},
        {"", "Omitted mentions", ErrorCategory::omitted_mention},
    };
    long long total = 0;
    for (const auto& [cat, count] : analysis.histogram) total += count;

    std::ostringstream os;
    os << std::left << std::setw(10) << "Group" << std::setw(20) << "Error type"
       << std::right << std::setw(8) << "Count" << std::setw(9) << "Percent" << "\n";
    for (const auto& [group, label, cat] : rows) {
        long long count = analysis.histogram.at(cat);
        double pct = total > 0 ? 100.0 * static_cast<double>(count) / total : 0.0;
        os << std::left << std::setw(10) << group << std::setw(20) << label << std::right
           << std::setw(8) << count << std::setw(8) << std::fixed << std::setprecision(1) << pct
           << "%" << "\n";
    }
    os << std::left << std::setw(10) << "" << std::setw(20) << "Total" << std::right
       << std::setw(8) << total << std::setw(8) << std::fixed << std::setprecision(1)
       << (total > 0 ? 100.0 : 0.0) << "%" << "\n";
    return os.str();
}

}  // namespace cmas
