#include <doctest.h>

#include <random>

#include "cfqa/corpus.hpp"
#include "cfqa/errors.hpp"
#include "test_support.hpp"

using namespace cfqa;
using namespace cfqa::corpus;
using cfqa::test::TempDir;

namespace {

CounterfactualRecord make_record(const std::string& qid, const std::string& answer,
                                 double attribution = 0.8, double factuality = 0.2) {
    CounterfactualRecord r;
    r.question_id = qid;
    r.question_text = "Who wrote Tiger Eyes?";
    r.document = "A document naming " + answer + " as the author.";
    r.answer = answer;
    r.original_gold_answer = "Shirley Conran";
    r.attribution_score = attribution;
    r.factuality_score = factuality;
    r.provenance = {"mock", std::string(64, 'a'), 0.7, 3, "1970-01-01T00:00:00Z"};
    return r;
}

}  // namespace

TEST_CASE("load_source_dataset reads mrqa-style lines") {
    TempDir dir("corpus");
    test::write_file(dir / "src.jsonl",
                     R"({"qid": "q1", "question": "Who wrote Tiger Eyes?", "answers": ["Shirley Conran"]})"
                     "\n"
                     R"({"qid": "q2", "question": "Largest planet?", "answers": ["Jupiter", "Jove"], "context": "ignored"})"
                     "\n");
    auto questions = load_source_dataset(dir / "src.jsonl", SourceFormat::TriviaQaMrqa);
    REQUIRE(questions.size() == 2);
    CHECK(questions[0].question_id == "q1");
    CHECK(questions[0].question_text == "Who wrote Tiger Eyes?");
    CHECK(questions[0].gold_answers == std::vector<std::string>{"Shirley Conran"});
    CHECK(questions[1].gold_answers.size() == 2);
}

TEST_CASE("load_source_dataset: empty file yields empty list") {
    TempDir dir("corpus");
    test::write_file(dir / "empty.jsonl", "");
    CHECK(load_source_dataset(dir / "empty.jsonl", SourceFormat::TriviaQaMrqa).empty());
}

TEST_CASE("load_source_dataset rejects duplicate ids naming the id") {
    TempDir dir("corpus");
    test::write_file(dir / "dup.jsonl",
                     R"({"qid": "q1", "question": "A?", "answers": ["x"]})"
                     "\n"
                     R"({"qid": "q1", "question": "B?", "answers": ["y"]})"
                     "\n");
    CHECK_THROWS_WITH_AS(load_source_dataset(dir / "dup.jsonl", SourceFormat::TriviaQaMrqa),
                         doctest::Contains("q1"), DataError);
}

TEST_CASE("load_source_dataset reports line number and byte offset") {
    TempDir dir("corpus");
    test::write_file(dir / "bad.jsonl",
                     R"({"qid": "q1", "question": "A?", "answers": ["x"]})"
                     "\n{not json\n");
    try {
        load_source_dataset(dir / "bad.jsonl", SourceFormat::TriviaQaMrqa);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string what = e.what();
        CHECK(what.find(":2") != std::string::npos);
        CHECK(what.find("byte offset 50") != std::string::npos);
    }
}

TEST_CASE("load_source_dataset generic format and validation") {
    TempDir dir("corpus");
    test::write_file(dir / "gen.jsonl",
                     R"({"question_id": "g1", "question_text": "Q?", "gold_answers": ["a"]})"
                     "\n");
    auto questions = load_source_dataset(dir / "gen.jsonl", SourceFormat::GenericJsonl);
    REQUIRE(questions.size() == 1);
    CHECK(questions[0].source_dataset == "generic");

    test::write_file(dir / "blank_answer.jsonl",
                     R"({"question_id": "g1", "question_text": "Q?", "gold_answers": ["  "]})"
                     "\n");
    CHECK_THROWS_AS(load_source_dataset(dir / "blank_answer.jsonl", SourceFormat::GenericJsonl),
                    DataError);
}

TEST_CASE("write_cf_dataset sorts by question_id and is deterministic") {
    TempDir dir("corpus");
    std::vector<CounterfactualRecord> records = {make_record("q9", "Judy Blume"),
                                                 make_record("q1", "Roald Dahl"),
                                                 make_record("q5", "Beverly Cleary")};
    write_cf_dataset(records, dir / "a.jsonl");
    std::reverse(records.begin(), records.end());
    write_cf_dataset(records, dir / "b.jsonl");
    const auto a = test::read_file(dir / "a.jsonl");
    CHECK(a == test::read_file(dir / "b.jsonl"));
    CHECK(a.find("q1") < a.find("q5"));
    CHECK(a.find("q5") < a.find("q9"));
}

TEST_CASE("write_cf_dataset: empty input, duplicates, bad records") {
    TempDir dir("corpus");
    write_cf_dataset({}, dir / "empty.jsonl");
    CHECK(test::read_file(dir / "empty.jsonl").empty());

    CHECK_THROWS_AS(write_cf_dataset({make_record("q1", "x"), make_record("q1", "y")},
                                     dir / "dup.jsonl"),
                    DataError);

    auto bad = make_record("q1", "x", 1.5);
    CHECK_THROWS_AS(write_cf_dataset({bad}, dir / "bad.jsonl"), DataError);
    // nothing written on validation failure
    CHECK(!std::filesystem::exists(dir / "bad.jsonl"));
}

TEST_CASE("cf dataset round-trips field for field") {
    TempDir dir("corpus");
    std::vector<CounterfactualRecord> records = {make_record("q2", "Judy Blume", 0.75, 0.125),
                                                 make_record("q1", "Roald Dahl", 0.5, 0.49)};
    write_cf_dataset(records, dir / "rt.jsonl");
    auto loaded = load_cf_dataset(dir / "rt.jsonl");
    REQUIRE(loaded.size() == 2);
    // sorted: q1 first
    CHECK(loaded[0].question_id == "q1");
    CHECK(loaded[1].question_id == "q2");
    for (const auto& original : records) {
        const auto& got = original.question_id == "q1" ? loaded[0] : loaded[1];
        CHECK(got.question_text == original.question_text);
        CHECK(got.document == original.document);
        CHECK(got.answer == original.answer);
        CHECK(got.original_gold_answer == original.original_gold_answer);
        CHECK(got.attribution_score == original.attribution_score);
        CHECK(got.factuality_score == original.factuality_score);
        CHECK(got.provenance.backend_id == original.provenance.backend_id);
        CHECK(got.provenance.prompt_hash == original.provenance.prompt_hash);
        CHECK(got.provenance.temperature == original.provenance.temperature);
        CHECK(got.provenance.sample_index == original.provenance.sample_index);
        CHECK(got.provenance.created_at == original.provenance.created_at);
    }
}

TEST_CASE("cf dataset line format uses the documented key order") {
    TempDir dir("corpus");
    write_cf_dataset({make_record("q1", "Judy Blume")}, dir / "order.jsonl");
    const auto line = test::read_file(dir / "order.jsonl");
    const char* keys[] = {"\"qid\"",       "\"question\"",           "\"document\"",
                          "\"answer\"",    "\"original_gold_answer\"", "\"attribution_score\"",
                          "\"factuality_score\"", "\"provenance\"",  "\"backend_id\"",
                          "\"prompt_hash\"", "\"temperature\"",      "\"sample_index\"",
                          "\"created_at\""};
    std::size_t last = 0;
    for (const char* key : keys) {
        const auto pos = line.find(key);
        REQUIRE(pos != std::string::npos);
        CHECK(pos > last);
        last = pos;
    }
}

TEST_CASE("write_manifest derives retention rates exactly") {
    TempDir dir("corpus");
    DatasetManifest m;
    m.stage_counts = {{"questions_in", 2},    {"raw_samples", 48},     {"parsed", 40},
                      {"post_surface", 20},   {"post_factuality", 10}, {"post_attribution", 4},
                      {"selected", 2}};
    m.seed = 11;
    write_manifest(m, dir / "m.json");
    auto j = nlohmann::json::parse(test::read_file(dir / "m.json"));
    CHECK(j["retention_rates"]["post_factuality"].get<double>() == 0.5);
    CHECK(j["retention_rates"]["parsed"].get<double>() == doctest::Approx(40.0 / 48.0));
    CHECK(j["retention_rates"]["selected"].get<double>() == 0.5);
    CHECK(j["seed"] == 11);

    auto loaded = load_manifest(dir / "m.json");
    CHECK(loaded.stage_counts == m.stage_counts);
    CHECK(loaded.seed == 11);
}

TEST_CASE("write_manifest rejects non-monotone counts") {
    TempDir dir("corpus");
    DatasetManifest m;
    m.stage_counts = {{"post_attribution", 4}, {"selected", 7}};
    CHECK_THROWS_AS(write_manifest(m, dir / "m.json"), DataError);
}

TEST_CASE("manifest monotonicity property over random pipelines") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const std::int64_t questions = static_cast<std::int64_t>(rng() % 50);
        const std::int64_t k = 1 + static_cast<std::int64_t>(rng() % 24);
        std::int64_t level = questions * k;
        DatasetManifest m;
        m.stage_counts["questions_in"] = questions;
        m.stage_counts["raw_samples"] = level;
        for (const char* stage :
             {"parsed", "post_surface", "post_factuality", "post_attribution"}) {
            level = level == 0 ? 0 : static_cast<std::int64_t>(rng() % (level + 1));
            m.stage_counts[stage] = level;
        }
        m.stage_counts["selected"] = std::min<std::int64_t>(level, questions);
        TempDir dir("corpus_prop");
        write_manifest(m, dir / "m.json");  // must not throw
        auto j = nlohmann::json::parse(test::read_file(dir / "m.json"));
        for (const auto& [stage, rate] : j["retention_rates"].items()) {
            CHECK(rate.get<double>() >= 0.0);
            CHECK(rate.get<double>() <= 1.0);
        }
    }
}

TEST_CASE("candidates and scored files round-trip") {
    TempDir dir("corpus");
    RecitationCandidate parsed;
    parsed.question_id = "q1";
    parsed.sample_index = 3;
    parsed.raw_completion = "doc\n\nAnswer: x";
    parsed.parsed = true;
    parsed.document = "doc";
    parsed.answer = "x";
    parsed.provenance = {"mock", std::string(64, 'b'), 0.7, 3, ""};

    RecitationCandidate violated;
    violated.question_id = "q1";
    violated.sample_index = 4;
    violated.raw_completion = "";
    violated.violation = ViolationReason::EmptyDocument;
    violated.provenance = {"mock", std::string(64, 'b'), 0.7, 4, ""};

    write_candidates({parsed, violated}, dir / "c.jsonl");
    auto candidates = load_candidates(dir / "c.jsonl");
    REQUIRE(candidates.size() == 2);
    CHECK(candidates[0].parsed);
    CHECK(candidates[0].answer == "x");
    CHECK(!candidates[1].parsed);
    CHECK(candidates[1].violation == ViolationReason::EmptyDocument);

    ScoredCandidate scored;
    scored.candidate = parsed;
    scored.surface_match = false;
    scored.factuality = FilterVerdict{0.1, 0.7, 0.125};
    write_scored({scored}, dir / "s.jsonl");
    auto loaded = load_scored(dir / "s.jsonl");
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].factuality.has_value());
    CHECK(loaded[0].factuality->normalized_yes == 0.125);
    CHECK(!loaded[0].attribution.has_value());
}

TEST_CASE("load_predictions") {
    TempDir dir("corpus");
    test::write_file(dir / "p.jsonl", R"({"qid": "q1", "answer": "Paris"})"
                                      "\n");
    auto predictions = load_predictions(dir / "p.jsonl");
    REQUIRE(predictions.size() == 1);
    CHECK(predictions[0].question_id == "q1");
    CHECK(predictions[0].predicted_answer == "Paris");
}
