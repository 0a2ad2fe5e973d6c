#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmas/corpus.hpp"
#include "cmas/demo_retriever.hpp"
#include "cmas/discriminator.hpp"
#include "cmas/embedding.hpp"
#include "cmas/evaluation.hpp"
#include "cmas/gateway.hpp"
#include "cmas/parallel.hpp"
#include "cmas/predictor.hpp"
#include "cmas/self_annotator.hpp"
#include "cmas/sha256.hpp"
#include "cmas/trf.hpp"
#include "cmas/types.hpp"
#include "cmas/voting.hpp"

namespace cmas {

// ---------------------------------------------------------------------------
// Configuration. Defaults follow the experimental protocol: K=50 neighbors,
// k=16 demonstrations, rho=3, 1-grams, 5 samples at temperature 0.7 for
// self-consistency voting, 500 unlabeled sentences, three 300-sentence test
// folds. Single-sample calls (TRF extraction, discrimination) run at
// temperature_single.
// ---------------------------------------------------------------------------

struct PipelineConfig {
    std::filesystem::path manifest;
    std::string backend = "mock";  // mock | live
    std::string base_url;
    std::filesystem::path mock_script;  // optional script file for the mock backend
    std::string model_id = "mock-model";
    std::string embedding_backend = "mock";  // mock | live
    std::string embedding_base_url;
    std::string embedding_model;
    int mock_embedding_dim = 64;

    int K = 50;
    int k = 16;
    double rho = 3.0;
    int m = 1;
    int n_samples = 5;
    double temperature_voting = 0.7;
    double temperature_single = 0.0;
    int shots = 0;
    std::uint64_t seed = 0;
    int max_tokens = 1024;

    std::size_t unlabeled_size = 500;
    std::size_t fold_size = 300;
    int n_folds = 3;
    bool retrieval_dedup = true;
    bool exclude_failed = false;  // failed predictions count with zero entities by default

    std::filesystem::path cache_dir = "cache";
    std::filesystem::path output_dir = "out";
    int concurrency = 4;

    void validate() const {
        if (manifest.empty()) throw ConfigError("config: manifest path required");
        if (k < 1 || K < 1 || k > K) throw ConfigError("config: need 1 <= k <= K");
        if (rho < 1.0) throw ConfigError("config: rho must be >= 1");
        if (m < 1) throw ConfigError("config: m must be >= 1");
        if (n_samples < 1) throw ConfigError("config: n_samples must be >= 1");
        if (temperature_voting < 0 || temperature_single < 0) {
            throw ConfigError("config: temperatures must be non-negative");
        }
        if (shots < 0) throw ConfigError("config: shots must be non-negative");
        if (backend != "mock" && backend != "live") {
            throw ConfigError("config: backend must be mock or live");
        }
        if (embedding_backend != "mock" && embedding_backend != "live") {
            throw ConfigError("config: embedding_backend must be mock or live");
        }
        if (backend == "live" && base_url.empty()) {
            throw ConfigError("config: live backend requires base_url");
        }
        if (embedding_backend == "live" && (embedding_base_url.empty() || embedding_model.empty())) {
            throw ConfigError("config: live embeddings require embedding_base_url and embedding_model");
        }
    }
};

inline PipelineConfig config_from_json(const json& j, const std::filesystem::path& relative_to = {}) {
    PipelineConfig c;
    auto path_of = [&](const std::string& value) -> std::filesystem::path {
        std::filesystem::path p = value;
        if (!relative_to.empty() && p.is_relative()) return relative_to / p;
        return p;
    };
    if (j.contains("manifest")) c.manifest = path_of(j.at("manifest").get<std::string>());
    c.backend = j.value("backend", c.backend);
    c.base_url = j.value("base_url", c.base_url);
    if (j.contains("mock_script")) c.mock_script = path_of(j.at("mock_script").get<std::string>());
    c.model_id = j.value("model_id", c.model_id);
    c.embedding_backend = j.value("embedding_backend", c.embedding_backend);
    c.embedding_base_url = j.value("embedding_base_url", c.embedding_base_url);
    c.embedding_model = j.value("embedding_model", c.embedding_model);
    c.mock_embedding_dim = j.value("mock_embedding_dim", c.mock_embedding_dim);
    c.K = j.value("K", c.K);
    c.k = j.value("k", c.k);
    c.rho = j.value("rho", c.rho);
    c.m = j.value("m", c.m);
    c.n_samples = j.value("n_samples", c.n_samples);
    c.temperature_voting = j.value("temperature_voting", c.temperature_voting);
    c.temperature_single = j.value("temperature_single", c.temperature_single);
    c.shots = j.value("shots", c.shots);
    c.seed = j.value("seed", c.seed);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.unlabeled_size = j.value("unlabeled_size", c.unlabeled_size);
    c.fold_size = j.value("fold_size", c.fold_size);
    c.n_folds = j.value("n_folds", c.n_folds);
    c.retrieval_dedup = j.value("retrieval_dedup", c.retrieval_dedup);
    c.exclude_failed = j.value("exclude_failed", c.exclude_failed);
    if (j.contains("cache_dir")) c.cache_dir = path_of(j.at("cache_dir").get<std::string>());
    if (j.contains("output_dir")) c.output_dir = path_of(j.at("output_dir").get<std::string>());
    c.concurrency = j.value("concurrency", c.concurrency);
    return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    PipelineConfig c = config_from_json(j, path.parent_path());
    c.validate();
    return c;
}

/// Digest over everything that shapes pipeline outputs. Storage locations and
/// the concurrency limit do not affect results and stay out of the digest.
inline std::string config_digest(const PipelineConfig& c) {
    nlohmann::json j;  // sorted keys
    j["manifest"] = c.manifest.string();
    j["backend"] = c.backend;
    j["base_url"] = c.base_url;
    j["mock_script"] = c.mock_script.string();
    j["model_id"] = c.model_id;
    j["embedding_backend"] = c.embedding_backend;
    j["embedding_base_url"] = c.embedding_base_url;
    j["embedding_model"] = c.embedding_model;
    j["mock_embedding_dim"] = c.mock_embedding_dim;
    j["K"] = c.K;
    j["k"] = c.k;
    j["rho"] = c.rho;
    j["m"] = c.m;
    j["n_samples"] = c.n_samples;
    j["temperature_voting"] = c.temperature_voting;
    j["temperature_single"] = c.temperature_single;
    j["shots"] = c.shots;
    j["seed"] = c.seed;
    j["max_tokens"] = c.max_tokens;
    j["unlabeled_size"] = c.unlabeled_size;
    j["fold_size"] = c.fold_size;
    j["n_folds"] = c.n_folds;
    j["retrieval_dedup"] = c.retrieval_dedup;
    j["exclude_failed"] = c.exclude_failed;
    return sha256_hex(j.dump());
}

inline std::shared_ptr<ChatBackend> make_chat_backend(const PipelineConfig& c) {
    if (c.backend == "live") return std::make_shared<HttpChatBackend>(c.base_url);
    auto mock = std::make_shared<MockBackend>();
    if (!c.mock_script.empty()) mock->load_script_file(c.mock_script);
    return mock;
}

inline std::shared_ptr<EmbeddingProvider> make_embedding_provider(const PipelineConfig& c) {
    if (c.embedding_backend == "live") {
        return std::make_shared<HttpEmbeddingProvider>(c.embedding_base_url, c.embedding_model);
    }
    return std::make_shared<MockEmbeddingProvider>(static_cast<std::size_t>(c.mock_embedding_dim),
                                                   c.seed);
}

// ---------------------------------------------------------------------------
// Run state and artifacts
// ---------------------------------------------------------------------------

struct FoldEvaluation {
    F1Report f1;
    ErrorAnalysis errors;
};

struct PipelineResult {
    std::string config_digest;
    std::vector<F1Report> fold_reports;
    F1Report average;  // precision/recall/f1 are arithmetic means over folds
    GatewayStats gateway_stats;
    EmbeddingStats embedding_stats;
    std::vector<std::string> warnings;
    std::filesystem::path output_dir;
};

class Pipeline {
public:
    explicit Pipeline(PipelineConfig config)
        : config_(std::move(config)), digest_(cmas::config_digest(config_)),
          gateway_(make_chat_backend(config_), config_.cache_dir / "completions"),
          embedder_(make_embedding_provider(config_), config_.cache_dir / "embeddings") {
        config_.validate();
        std::filesystem::create_directories(config_.output_dir);
        if (config_.shots != 0 && config_.shots != 3 && config_.shots != 5 && config_.shots != 10) {
            warn("shots=" + std::to_string(config_.shots) +
                 " is outside the standard protocol values {0, 3, 5, 10}");
        }
    }

    const PipelineConfig& config() const { return config_; }
    const std::string& digest() const { return digest_; }
    LlmGateway& gateway() { return gateway_; }
    EmbeddingService& embedder() { return embedder_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

    SamplingParams voting_params() const {
        return {config_.temperature_voting, config_.n_samples, config_.max_tokens,
                config_.model_id};
    }
    SamplingParams single_params() const {
        return {config_.temperature_single, 1, config_.max_tokens, config_.model_id};
    }

    json meta() const {
        return {{"config_digest", digest_}, {"dataset", dataset_ ? dataset_->name : ""}};
    }

    // -- Stage: ingest ------------------------------------------------------

    const Dataset& ingest() {
        if (!dataset_) {
            std::vector<std::string> load_warnings;
            dataset_ = load_manifest(config_.manifest, &load_warnings);
            for (auto& w : load_warnings) warn(w);
            protocol_ = sample_protocol(*dataset_, config_.seed, config_.unlabeled_size,
                                        config_.fold_size, config_.n_folds);
            for (auto& w : protocol_.warnings) warn(w);
        }
        return *dataset_;
    }

    const ProtocolSample& protocol() {
        ingest();
        return protocol_;
    }

    // -- Stage: annotate (or gold demo pool in few-shot mode) ---------------

    const std::vector<AnnotatedSentence>& demonstration_store() {
        if (!store_.empty()) return store_;
        ingest();
        if (config_.shots > 0) {
            store_ = sample_gold_demos();
            save_jsonl(config_.output_dir / "gold_demos.jsonl", store_, meta());
            return store_;
        }
        auto path = config_.output_dir / "self_annotations.jsonl";
        if (auto existing = read_jsonl_meta(path);
            existing && existing->value("config_digest", "") == digest_) {
            store_ = load_jsonl(path, dataset_->label_set, "", /*validate_types=*/false).sentences;
            return store_;
        }
        AnnotateResult annotated = annotate_corpus(protocol_.unlabeled, dataset_->label_set,
                                                   gateway_, voting_params(), config_.concurrency);
        for (auto& w : annotated.warnings) warn(w);
        store_ = std::move(annotated.annotated);
        if (store_.empty()) throw Error("annotation produced an empty store");
        save_jsonl(path, store_, meta());
        return store_;
    }

    // -- Stage: mine-trf -----------------------------------------------------

    const std::map<std::string, TrfSet>& mined_trfs() {
        if (trf_by_type_.empty()) {
            const auto& store = demonstration_store();
            NgramCounts counts = count_ngrams(store, dataset_->label_set, config_.m);
            trf_by_type_ = filter_trfs(counts, config_.rho);
            json types = json::object();
            for (const auto& [type, set] : trf_by_type_) types[type] = set.features;
            json artifact = {{"_meta", meta()}, {"m", config_.m}, {"rho", config_.rho},
                             {"types", types}};
            std::ofstream out(config_.output_dir / "trf_sets.json", std::ios::trunc);
            out << artifact.dump(2) << "\n";
        }
        return trf_by_type_;
    }

    /// Pseudo TRF labels are a pure function of the demo and the mined sets;
    /// memoized per sentence id across targets.
    TrfSet pseudo_labels_for(const AnnotatedSentence& demo) {
        {
            std::lock_guard lock(pseudo_mutex_);
            auto it = pseudo_memo_.find(demo.id());
            if (it != pseudo_memo_.end()) return it->second;
        }
        TrfSet labels = assign_pseudo_labels(demo, mined_trfs(), embedder_);
        std::lock_guard lock(pseudo_mutex_);
        return pseudo_memo_.emplace(demo.id(), std::move(labels)).first->second;
    }

    // -- Stage: predict ------------------------------------------------------

    struct TargetOutput {
        AnnotatedSentence prediction;
        bool failed = false;
        TrfSet target_trfs;
        ScoredDemonstrationSet scored;
    };

    TargetOutput process_target(const Sentence& target) {
        const auto& store = demonstration_store();
        const auto& label_set = dataset_->label_set;
        int k_eff = std::min<int>(config_.k, static_cast<int>(store.size()));
        int K_eff = std::min<int>(config_.K, static_cast<int>(store.size()));
        k_eff = std::min(k_eff, K_eff);

        DemonstrationSet demos = retrieve(target, store, embedder_, K_eff, k_eff,
                                          config_.retrieval_dedup);
        std::vector<std::pair<AnnotatedSentence, TrfSet>> with_labels;
        with_labels.reserve(demos.demos.size());
        for (const auto& d : demos.demos) {
            with_labels.emplace_back(d.demo, pseudo_labels_for(d.demo));
        }

        TargetOutput out;
        out.target_trfs = extract_trfs(target, with_labels, label_set, gateway_, single_params());
        out.scored = score_demonstrations(target, out.target_trfs, with_labels, label_set,
                                          gateway_, single_params());
        auto disc_prompt =
            build_discriminator_prompt(target, out.target_trfs, with_labels, label_set);
        Prediction pred = predict(target, disc_prompt, out.scored.raw_answer, label_set, gateway_,
                                  voting_params());
        out.prediction = std::move(pred.annotated);
        out.failed = pred.failed;
        return out;
    }

    /// Predictions for one fold, in fold order. An existing complete artifact
    /// with a matching config digest is reused instead of recomputed.
    std::vector<AnnotatedSentence> predict_fold(int fold_index) {
        ingest();
        const auto& fold = protocol_.folds.at(static_cast<std::size_t>(fold_index));
        auto path = fold_predictions_path(fold_index);
        if (auto existing = read_jsonl_meta(path);
            existing && existing->value("config_digest", "") == digest_) {
            auto loaded = load_jsonl(path, dataset_->label_set, "", /*validate_types=*/false);
            if (loaded.sentences.size() == fold.size()) return std::move(loaded.sentences);
        }
        demonstration_store();
        mined_trfs();

        std::vector<AnnotatedSentence> predictions(fold.size());
        std::vector<json> trf_records(fold.size());
        parallel_for(fold.size(), config_.concurrency, [&](std::size_t i) {
            TargetOutput out = process_target(fold[i].sentence);
            out.prediction.sentence = fold[i].sentence;
            predictions[i] = std::move(out.prediction);
            trf_records[i] = {{"id", fold[i].id()},
                              {"features", out.target_trfs.features},
                              {"failed", out.failed}};
        });

        save_jsonl(path, predictions, meta());
        std::ofstream trf_out(fold_trf_path(fold_index), std::ios::trunc);
        trf_out << json{{"_meta", meta()}}.dump() << "\n";
        for (const auto& rec : trf_records) trf_out << rec.dump() << "\n";
        save_jsonl(fold_gold_path(fold_index), fold, meta());
        return predictions;
    }

    // -- Stage: evaluate -----------------------------------------------------

    FoldEvaluation evaluate_fold(int fold_index) {
        ingest();
        const auto& gold = protocol_.folds.at(static_cast<std::size_t>(fold_index));
        std::vector<AnnotatedSentence> pred = predict_fold(fold_index);

        std::vector<AnnotatedSentence> gold_eval = gold, pred_eval = pred;
        if (config_.exclude_failed) {
            std::vector<AnnotatedSentence> g2, p2;
            for (std::size_t i = 0; i < pred_eval.size(); ++i) {
                if (!pred_eval[i].sc_score) continue;  // failed prediction
                g2.push_back(gold_eval[i]);
                p2.push_back(pred_eval[i]);
            }
            gold_eval = std::move(g2);
            pred_eval = std::move(p2);
        }
        FoldEvaluation eval;
        eval.f1 = micro_f1(gold_eval, pred_eval);
        eval.errors = classify_errors(gold_eval, pred_eval, dataset_->label_set);
        return eval;
    }

    PipelineResult run() {
        auto started = std::chrono::steady_clock::now();
        ingest();
        demonstration_store();
        mined_trfs();

        PipelineResult result;
        result.config_digest = digest_;
        result.output_dir = config_.output_dir;

        ErrorAnalysis aggregate_errors;
        for (const auto& [cat, name] : error_category_names()) aggregate_errors.histogram[cat] = 0;

        json fold_reports = json::array();
        json fold_errors = json::array();
        for (int f = 0; f < static_cast<int>(protocol_.folds.size()); ++f) {
            FoldEvaluation eval = evaluate_fold(f);
            result.fold_reports.push_back(eval.f1);
            fold_reports.push_back({{"fold", f + 1}, {"report", eval.f1.to_json()}});
            fold_errors.push_back({{"fold", f + 1}, {"report", error_report_json(eval.errors)}});
            for (const auto& [cat, count] : eval.errors.histogram) {
                aggregate_errors.histogram[cat] += count;
            }
            for (auto& rec : eval.errors.records) {
                aggregate_errors.records.push_back(std::move(rec));
            }
        }

        // Reported numbers are arithmetic means over the folds.
        double p = 0, r = 0, f1 = 0;
        for (const auto& rep : result.fold_reports) {
            p += rep.precision;
            r += rep.recall;
            f1 += rep.f1;
            result.average.true_positives += rep.true_positives;
            result.average.false_positives += rep.false_positives;
            result.average.false_negatives += rep.false_negatives;
        }
        auto n = static_cast<double>(result.fold_reports.size());
        result.average.precision = p / n;
        result.average.recall = r / n;
        result.average.f1 = f1 / n;

        flush_pseudo_labels();
        write_report(fold_reports, result);
        write_errors(fold_errors, aggregate_errors);
        write_stats(started);

        result.gateway_stats = gateway_.stats();
        result.embedding_stats = embedder_.stats();
        result.warnings = warnings_;
        return result;
    }

    std::filesystem::path fold_predictions_path(int fold_index) const {
        return config_.output_dir / ("predictions_fold" + std::to_string(fold_index + 1) + ".jsonl");
    }
    std::filesystem::path fold_gold_path(int fold_index) const {
        return config_.output_dir / ("gold_fold" + std::to_string(fold_index + 1) + ".jsonl");
    }
    std::filesystem::path fold_trf_path(int fold_index) const {
        return config_.output_dir / ("target_trfs_fold" + std::to_string(fold_index + 1) + ".jsonl");
    }

private:
    void warn(std::string message) {
        std::lock_guard lock(warn_mutex_);
        warnings_.push_back(std::move(message));
    }

    std::vector<AnnotatedSentence> sample_gold_demos() {
        std::mt19937_64 rng(config_.seed ^ 0x9E3779B97F4A7C15ull);
        std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(config_.shots),
                                                 dataset_->train.size());
        if (want < static_cast<std::size_t>(config_.shots)) {
            warn("train smaller than shots; using all " + std::to_string(want) + " sentences");
        }
        std::vector<AnnotatedSentence> demos;
        for (auto i : detail::sample_indices(dataset_->train.size(), want, rng)) {
            demos.push_back(dataset_->train[i]);
        }
        return demos;
    }

    void flush_pseudo_labels() {
        std::lock_guard lock(pseudo_mutex_);
        std::ofstream out(config_.output_dir / "pseudo_labels.jsonl", std::ios::trunc);
        out << json{{"_meta", meta()}}.dump() << "\n";
        for (const auto& [id, set] : pseudo_memo_) {
            out << json{{"id", id}, {"features", set.features}}.dump() << "\n";
        }
    }

    void write_report(const json& fold_reports, const PipelineResult& result) {
        json report = {{"_meta", meta()},
                       {"folds", fold_reports},
                       {"average",
                        {{"precision", result.average.precision},
                         {"recall", result.average.recall},
                         {"f1", result.average.f1}}}};
        std::ofstream out(config_.output_dir / "report.json", std::ios::trunc);
        out << report.dump(2) << "\n";

        std::ostringstream text;
        text << "Dataset: " << dataset_->name << "\n";
        for (std::size_t f = 0; f < result.fold_reports.size(); ++f) {
            const auto& rep = result.fold_reports[f];
            text << "Fold " << f + 1 << ": P=" << std::fixed << std::setprecision(4)
                 << rep.precision << " R=" << rep.recall << " F1=" << rep.f1
                 << " (TP=" << rep.true_positives << " FP=" << rep.false_positives
                 << " FN=" << rep.false_negatives << ")\n";
        }
        text << "Average: P=" << std::fixed << std::setprecision(4) << result.average.precision
             << " R=" << result.average.recall << " F1=" << result.average.f1 << "\n";
        std::ofstream txt(config_.output_dir / "report.txt", std::ios::trunc);
        txt << text.str();
    }

    void write_errors(const json& fold_errors, const ErrorAnalysis& aggregate) {
        json artifact = {{"_meta", meta()},
                         {"folds", fold_errors},
                         {"aggregate", error_report_json(aggregate)}};
        std::ofstream out(config_.output_dir / "errors.json", std::ios::trunc);
        out << artifact.dump(2) << "\n";
        std::ofstream txt(config_.output_dir / "errors.txt", std::ios::trunc);
        txt << error_report_text(aggregate);
    }

    void write_stats(std::chrono::steady_clock::time_point started) {
        auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started);
        GatewayStats g = gateway_.stats();
        EmbeddingStats e = embedder_.stats();
        json stats = {{"_meta", meta()},
                      {"completions",
                       {{"samples_requested", g.samples_requested},
                        {"cache_hits", g.cache_hits},
                        {"backend_calls", g.backend_calls}}},
                      {"embeddings",
                       {{"requested", e.requested},
                        {"cache_hits", e.cache_hits},
                        {"computed", e.computed}}},
                      {"wall_seconds", elapsed.count()}};
        std::ofstream out(config_.output_dir / "run_stats.json", std::ios::trunc);
        out << stats.dump(2) << "\n";
    }

    PipelineConfig config_;
    std::string digest_;
    LlmGateway gateway_;
    EmbeddingService embedder_;

    std::optional<Dataset> dataset_;
    ProtocolSample protocol_;
    std::vector<AnnotatedSentence> store_;
    std::map<std::string, TrfSet> trf_by_type_;
    std::map<std::string, TrfSet> pseudo_memo_;
    std::mutex pseudo_mutex_;
    std::mutex warn_mutex_;
    std::vector<std::string> warnings_;
};

inline PipelineResult run_pipeline(const PipelineConfig& config) {
    Pipeline pipeline(config);
    return pipeline.run();
}

/// Artifacts fed into evaluation together must come from one configuration.
/// Files without digest metadata (hand-written gold data) pass unchecked.
inline void ensure_same_config_digest(const std::filesystem::path& gold_path,
                                      const std::filesystem::path& pred_path) {
    auto gold_meta = read_jsonl_meta(gold_path);
    auto pred_meta = read_jsonl_meta(pred_path);
    if (!gold_meta || !pred_meta) return;
    std::string g = gold_meta->value("config_digest", "");
    std::string p = pred_meta->value("config_digest", "");
    if (!g.empty() && !p.empty() && g != p) {
        throw ValidationError("gold and prediction files come from different configurations: " +
                              g.substr(0, 12) + "... vs " + p.substr(0, 12) + "...");
    }
}

}  // namespace cmas
