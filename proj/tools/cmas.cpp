// Command-line surface for the zero-shot NER pipeline: ingest, annotate,
// mine-trf, predict, evaluate, analyze-errors, run-all.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cmas/corpus.hpp"
#include "cmas/evaluation.hpp"
#include "cmas/pipeline.hpp"

namespace {

using cmas::json;

cmas::LabelSet labels_from_csv(const std::string& csv) {
    std::vector<std::string> names;
    std::string cur;
    for (char c : csv) {
        if (c == ',') {
            if (!cur.empty()) names.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) names.push_back(cur);
    return cmas::LabelSet::from_names(names);
}

/// Loads a gold/prediction pair, rejecting inputs produced by different
/// pipeline configurations.
std::pair<std::vector<cmas::AnnotatedSentence>, std::vector<cmas::AnnotatedSentence>>
load_eval_pair(const std::string& gold_path, const std::string& pred_path,
               const cmas::LabelSet& labels) {
    cmas::ensure_same_config_digest(gold_path, pred_path);
    auto gold = cmas::load_jsonl(gold_path, labels, "", /*validate_types=*/false).sentences;
    auto pred = cmas::load_jsonl(pred_path, labels, "", /*validate_types=*/false).sentences;
    if (gold.size() != pred.size()) {
        throw cmas::ValidationError("gold and prediction files differ in length");
    }
    return {std::move(gold), std::move(pred)};
}

void print_warnings(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

int cmd_ingest(const std::string& config_path) {
    cmas::Pipeline pipeline(cmas::load_config(config_path));
    const cmas::Dataset& ds = pipeline.ingest();
    const auto& out_dir = pipeline.config().output_dir;
    cmas::save_jsonl(out_dir / "train.jsonl", ds.train, pipeline.meta());
    cmas::save_jsonl(out_dir / "test.jsonl", ds.test, pipeline.meta());

    json per_type = json::object();
    for (const auto& t : ds.label_set.types()) per_type[t.name] = 0;
    auto count = [&](const std::vector<cmas::AnnotatedSentence>& split) {
        long long entities = 0;
        for (const auto& s : split) {
            entities += static_cast<long long>(s.entities.size());
            for (const auto& e : s.entities) {
                if (per_type.contains(e.type.name)) {
                    per_type[e.type.name] = per_type[e.type.name].get<long long>() + 1;
                }
            }
        }
        return entities;
    };
    json stats = {{"_meta", pipeline.meta()},
                  {"dataset", ds.name},
                  {"train_sentences", ds.train.size()},
                  {"test_sentences", ds.test.size()},
                  {"train_entities", count(ds.train)},
                  {"test_entities", count(ds.test)},
                  {"entities_per_type", per_type}};
    std::ofstream out(out_dir / "dataset_stats.json", std::ios::trunc);
    out << stats.dump(2) << "\n";
    std::cout << stats.dump(2) << "\n";
    print_warnings(pipeline.warnings());
    return 0;
}

int cmd_annotate(const std::string& config_path) {
    cmas::Pipeline pipeline(cmas::load_config(config_path));
    const auto& store = pipeline.demonstration_store();
    std::cout << "annotated store: " << store.size() << " sentences -> "
              << (pipeline.config().output_dir / "self_annotations.jsonl").string() << "\n";
    print_warnings(pipeline.warnings());
    return 0;
}

int cmd_mine_trf(const std::string& config_path, double rho_override) {
    cmas::PipelineConfig config = cmas::load_config(config_path);
    if (rho_override > 0) config.rho = rho_override;
    cmas::Pipeline pipeline(std::move(config));
    const auto& mined = pipeline.mined_trfs();
    std::size_t features = 0;
    for (const auto& [type, set] : mined) features += set.features.size();
    std::cout << "mined " << features << " features across " << mined.size() << " types -> "
              << (pipeline.config().output_dir / "trf_sets.json").string() << "\n";
    print_warnings(pipeline.warnings());
    return 0;
}

int cmd_predict(const std::string& config_path, int fold) {
    cmas::Pipeline pipeline(cmas::load_config(config_path));
    int n_folds = static_cast<int>(pipeline.protocol().folds.size());
    for (int f = 0; f < n_folds; ++f) {
        if (fold > 0 && f != fold - 1) continue;
        auto predictions = pipeline.predict_fold(f);
        std::cout << "fold " << f + 1 << ": " << predictions.size() << " predictions -> "
                  << pipeline.fold_predictions_path(f).string() << "\n";
    }
    print_warnings(pipeline.warnings());
    return 0;
}

int cmd_evaluate(const std::string& gold_path, const std::string& pred_path,
                 const std::string& labels_csv) {
    cmas::LabelSet labels =
        labels_csv.empty() ? cmas::LabelSet{} : labels_from_csv(labels_csv);
    auto [gold, pred] = load_eval_pair(gold_path, pred_path, labels);
    cmas::F1Report report = cmas::micro_f1(gold, pred);
    std::cout << report.to_json().dump(2) << "\n";
    return 0;
}

int cmd_analyze_errors(const std::string& gold_path, const std::string& pred_path,
                       const std::string& labels_csv, bool text) {
    cmas::LabelSet labels = labels_from_csv(labels_csv);
    auto [gold, pred] = load_eval_pair(gold_path, pred_path, labels);
    cmas::ErrorAnalysis analysis = cmas::classify_errors(gold, pred, labels);
    if (text) std::cout << cmas::error_report_text(analysis);
    else std::cout << cmas::error_report_json(analysis).dump(2) << "\n";
    return 0;
}

int cmd_run_all(const std::string& config_path) {
    cmas::PipelineResult result = cmas::run_pipeline(cmas::load_config(config_path));
    std::cout << "config digest: " << result.config_digest << "\n";
    for (std::size_t f = 0; f < result.fold_reports.size(); ++f) {
        const auto& rep = result.fold_reports[f];
        std::cout << "fold " << f + 1 << ": P=" << rep.precision << " R=" << rep.recall
                  << " F1=" << rep.f1 << "\n";
    }
    std::cout << "average F1: " << result.average.f1 << "\n";
    std::cout << "completions: " << result.gateway_stats.samples_requested << " requested, "
              << result.gateway_stats.cache_hits << " cache hits, "
              << result.gateway_stats.backend_calls << " backend calls\n";
    std::cout << "artifacts: " << result.output_dir.string() << "\n";
    print_warnings(result.warnings);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cooperative multi-agent zero-shot NER pipeline"};
    app.require_subcommand(1);

    std::string config_path, gold_path, pred_path, labels_csv;
    double rho_override = 0;
    int fold = 0;
    bool text = false;

    auto* ingest = app.add_subcommand("ingest", "Load the dataset and write normalized splits");
    ingest->add_option("--config", config_path, "Pipeline config file")->required();

    auto* annotate = app.add_subcommand("annotate", "Self-annotate the unlabeled corpus");
    annotate->add_option("--config", config_path, "Pipeline config file")->required();

    auto* mine = app.add_subcommand("mine-trf", "Mine type-related features");
    mine->add_option("--config", config_path, "Pipeline config file")->required();
    mine->add_option("--rho", rho_override, "Override the frequency-ratio threshold");

    auto* predict = app.add_subcommand("predict", "Predict entities for the test folds");
    predict->add_option("--config", config_path, "Pipeline config file")->required();
    predict->add_option("--fold", fold, "Only this fold (1-based)");

    auto* evaluate = app.add_subcommand("evaluate", "Micro-F1 of predictions against gold");
    evaluate->add_option("--gold", gold_path, "Gold JSON-lines file")->required();
    evaluate->add_option("--pred", pred_path, "Prediction JSON-lines file")->required();
    evaluate->add_option("--labels", labels_csv, "Comma-separated label set");

    auto* analyze = app.add_subcommand("analyze-errors", "Error taxonomy report");
    analyze->add_option("--gold", gold_path, "Gold JSON-lines file")->required();
    analyze->add_option("--pred", pred_path, "Prediction JSON-lines file")->required();
    analyze->add_option("--labels", labels_csv, "Comma-separated label set")->required();
    analyze->add_flag("--text", text, "Plain-text table instead of JSON");

    auto* run_all = app.add_subcommand("run-all", "Run the whole pipeline end to end");
    run_all->add_option("--config", config_path, "Pipeline config file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) return cmd_ingest(config_path);
        if (*annotate) return cmd_annotate(config_path);
        if (*mine) return cmd_mine_trf(config_path, rho_override);
        if (*predict) return cmd_predict(config_path, fold);
        if (*evaluate) return cmd_evaluate(gold_path, pred_path, labels_csv);
        if (*analyze) return cmd_analyze_errors(gold_path, pred_path, labels_csv, text);
        if (*run_all) return cmd_run_all(config_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
