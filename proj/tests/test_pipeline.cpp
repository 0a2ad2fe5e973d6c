#include <catch2/catch_amalgamated.hpp>

#include "cmas/pipeline.hpp"
#include "fixture_mock.hpp"
#include "test_util.hpp"

using namespace cmas;

namespace {

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    REQUIRE(in);
    return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("mock fixture pipeline reproduces the hand-computed report") {
    auto work = testutil::fresh_dir("pipe_f1");
    auto corpus = fixture::write_mock_corpus(work / "data");
    PipelineConfig config = fixture::mock_config(corpus, work);

    PipelineResult result = run_pipeline(config);
    REQUIRE(result.fold_reports.size() == 1);  // 10 test sentences -> one fold
    const F1Report& fold = result.fold_reports[0];
    CHECK(fold.true_positives == fixture::MockCorpus::kExpectedTp);
    CHECK(fold.false_positives == fixture::MockCorpus::kExpectedFp);
    CHECK(fold.false_negatives == fixture::MockCorpus::kExpectedFn);
    CHECK(result.average.f1 == Catch::Approx(fixture::MockCorpus::kExpectedF1).epsilon(1e-12));

    auto errors = read_json(config.output_dir / "errors.json");
    const auto& counts = errors.at("aggregate").at("counts");
    CHECK(counts.at("wrong_type").get<int>() == 1);
    CHECK(counts.at("ood_type").get<int>() == 1);
    CHECK(counts.at("ood_mention").get<int>() == 1);
    CHECK(counts.at("omitted_mention").get<int>() == 3);
    CHECK(errors.at("aggregate").at("total").get<int>() == 6);

    SECTION("self-annotation store has every train sentence with sc 1.0") {
        Dataset ds = load_manifest(corpus.manifest);
        auto store = load_jsonl(config.output_dir / "self_annotations.jsonl", ds.label_set, "",
                                false);
        CHECK(store.sentences.size() == 12);
        for (const auto& s : store.sentences) {
            REQUIRE(s.sc_score.has_value());
            CHECK(*s.sc_score == 1.0);
            CHECK(s.provenance == Provenance::self_annotated);
        }
    }
    SECTION("artifacts carry the config digest") {
        for (const char* name : {"self_annotations.jsonl", "predictions_fold1.jsonl",
                                 "gold_fold1.jsonl", "pseudo_labels.jsonl"}) {
            auto meta = read_jsonl_meta(config.output_dir / name);
            REQUIRE(meta.has_value());
            CHECK(meta->value("config_digest", "") == result.config_digest);
        }
        CHECK(read_json(config.output_dir / "report.json").at("_meta").at("config_digest") ==
              result.config_digest);
        CHECK(read_json(config.output_dir / "trf_sets.json").at("_meta").at("config_digest") ==
              result.config_digest);
    }
    SECTION("no prediction failed") {
        Dataset ds = load_manifest(corpus.manifest);
        auto preds = load_jsonl(config.output_dir / "predictions_fold1.jsonl", ds.label_set, "",
                                false);
        REQUIRE(preds.sentences.size() == 10);
        for (const auto& p : preds.sentences) CHECK(p.sc_score.has_value());
    }
}

TEST_CASE("repeated runs are byte-identical and fully cached") {
    auto work = testutil::fresh_dir("pipe_det");
    auto corpus = fixture::write_mock_corpus(work / "data");
    PipelineConfig config = fixture::mock_config(corpus, work);

    std::vector<std::string> predictions, reports, error_reports;
    std::vector<GatewayStats> stats;
    for (int run = 0; run < 3; ++run) {
        std::filesystem::remove_all(config.output_dir);  // keep the cache only
        PipelineResult result = run_pipeline(config);
        predictions.push_back(testutil::read_file(config.output_dir / "predictions_fold1.jsonl"));
        reports.push_back(testutil::read_file(config.output_dir / "report.json"));
        error_reports.push_back(testutil::read_file(config.output_dir / "errors.json"));
        stats.push_back(result.gateway_stats);
    }
    CHECK(predictions[1] == predictions[0]);
    CHECK(predictions[2] == predictions[0]);
    CHECK(reports[1] == reports[0]);
    CHECK(reports[2] == reports[0]);
    CHECK(error_reports[1] == error_reports[0]);
    CHECK(error_reports[2] == error_reports[0]);

    // Runs 2 and 3: everything replays from the cache, zero backend calls.
    for (int run = 1; run < 3; ++run) {
        CHECK(stats[run].backend_calls == 0);
        CHECK(stats[run].cache_hits == stats[run].samples_requested);
        CHECK(stats[run].samples_requested > 0);
    }
    CHECK(stats[0].backend_calls > 0);
}

TEST_CASE("an un-wiped rerun resumes from persisted stores") {
    auto work = testutil::fresh_dir("pipe_resume");
    auto corpus = fixture::write_mock_corpus(work / "data");
    PipelineConfig config = fixture::mock_config(corpus, work);

    run_pipeline(config);
    PipelineResult second = run_pipeline(config);
    // Annotation store and fold predictions are reused outright.
    CHECK(second.gateway_stats.samples_requested == 0);

    SECTION("a config change invalidates the artifacts") {
        PipelineConfig changed = config;
        changed.rho = 2.0;
        PipelineResult third = run_pipeline(changed);
        CHECK(third.gateway_stats.samples_requested > 0);     // recomputed...
        CHECK(third.gateway_stats.cache_hits ==
              third.gateway_stats.samples_requested);         // ...from the cache
    }
}

TEST_CASE("few-shot mode swaps in gold demonstrations") {
    auto work = testutil::fresh_dir("pipe_shots");
    auto corpus = fixture::write_mock_corpus(work / "data");

    // Few-shot retrieval needs gold labels in the train split.
    {
        Dataset ds = load_manifest(corpus.manifest);
        std::vector<AnnotatedSentence> relabeled;
        int i = 0;
        for (auto s : ds.train) {
            if (i % 3 != 2) {  // leave some sentences unlabeled
                Entity e;
                e.span = {0, 1};
                e.type.name = i % 3 == 0 ? "Location" : "Person";
                e.surface = e.span.surface(s.sentence);
                s.entities = {e};
            }
            relabeled.push_back(s);
            ++i;
        }
        save_jsonl(corpus.root / "train.jsonl", relabeled);
    }

    PipelineConfig config = fixture::mock_config(corpus, work);
    config.shots = 3;
    Pipeline pipeline(config);
    const auto& store = pipeline.demonstration_store();
    REQUIRE(store.size() == 3);
    for (const auto& demo : store) CHECK(demo.provenance == Provenance::gold);

    auto meta = read_jsonl_meta(config.output_dir / "gold_demos.jsonl");
    REQUIRE(meta.has_value());

    // Every prompt sees exactly the three gold demos.
    pipeline.mined_trfs();
    Dataset ds = load_manifest(corpus.manifest);
    auto output = pipeline.process_target(pipeline.protocol().folds[0][0].sentence);
    CHECK(output.scored.entries.size() == 3);

    PipelineResult result = pipeline.run();
    REQUIRE(result.fold_reports.size() == 1);
}

TEST_CASE("mixed-digest evaluation inputs are rejected") {
    auto work = testutil::fresh_dir("pipe_mixed");
    AnnotatedSentence s;
    s.sentence = Sentence("s1", {"w"});
    save_jsonl(work / "gold.jsonl", {s}, json{{"config_digest", "aaaa"}});
    save_jsonl(work / "pred_other.jsonl", {s}, json{{"config_digest", "bbbb"}});
    save_jsonl(work / "pred_same.jsonl", {s}, json{{"config_digest", "aaaa"}});
    save_jsonl(work / "pred_plain.jsonl", {s});

    CHECK_THROWS_AS(ensure_same_config_digest(work / "gold.jsonl", work / "pred_other.jsonl"),
                    ValidationError);
    CHECK_NOTHROW(ensure_same_config_digest(work / "gold.jsonl", work / "pred_same.jsonl"));
    // hand-written files without metadata pass unchecked
    CHECK_NOTHROW(ensure_same_config_digest(work / "gold.jsonl", work / "pred_plain.jsonl"));
}

TEST_CASE("multi-fold reports average arithmetically") {
    auto work = testutil::fresh_dir("pipe_folds");
    auto corpus = fixture::write_mock_corpus(work / "data");
    PipelineConfig config = fixture::mock_config(corpus, work);
    config.fold_size = 3;  // 10 test sentences -> three sampled folds of 3
    config.n_folds = 3;

    PipelineResult result = run_pipeline(config);
    REQUIRE(result.fold_reports.size() == 3);
    double mean = 0;
    for (const auto& rep : result.fold_reports) mean += rep.f1;
    mean /= 3.0;
    CHECK(result.average.f1 == Catch::Approx(mean).margin(1e-12));

    auto report = read_json(config.output_dir / "report.json");
    CHECK(report.at("folds").size() == 3);
    CHECK(report.at("average").at("f1").get<double>() == Catch::Approx(mean).margin(1e-12));
}

TEST_CASE("config digest tracks result-shaping fields only") {
    auto work = testutil::fresh_dir("pipe_digest");
    auto corpus = fixture::write_mock_corpus(work / "data");
    PipelineConfig config = fixture::mock_config(corpus, work);

    std::string base = config_digest(config);
    PipelineConfig moved = config;
    moved.output_dir = work / "elsewhere";
    moved.cache_dir = work / "other_cache";
    moved.concurrency = 9;
    CHECK(config_digest(moved) == base);

    PipelineConfig different = config;
    different.rho = 5.0;
    CHECK(config_digest(different) != base);
    PipelineConfig reseeded = config;
    reseeded.seed = 8;
    CHECK(config_digest(reseeded) != base);
}

TEST_CASE("config validation rejects inconsistent settings") {
    PipelineConfig config;
    config.manifest = "manifest.json";
    CHECK_NOTHROW(config.validate());

    PipelineConfig bad = config;
    bad.k = 20;
    bad.K = 10;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = config;
    bad.rho = 0.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = config;
    bad.backend = "live";
    CHECK_THROWS_AS(bad.validate(), ConfigError);  // live requires base_url

    bad = config;
    bad.n_samples = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config file round-trip applies documented defaults") {
    auto work = testutil::fresh_dir("pipe_cfg");
    testutil::write_file(work / "config.json", R"({"manifest": "m.json"})");
    PipelineConfig config = load_config(work / "config.json");
    CHECK(config.K == 50);
    CHECK(config.k == 16);
    CHECK(config.rho == 3.0);
    CHECK(config.m == 1);
    CHECK(config.n_samples == 5);
    CHECK(config.temperature_voting == 0.7);
    CHECK(config.temperature_single == 0.0);
    CHECK(config.shots == 0);
    CHECK(config.unlabeled_size == 500);
    CHECK(config.fold_size == 300);
    CHECK(config.n_folds == 3);
    CHECK(config.manifest == work / "m.json");  // relative to the config file
}
