#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfqa/corpus.hpp"

namespace cfqa::quality {

struct NliQuery {
    std::string premise;
    std::string hypothesis;
};

struct NliDistribution {
    double entailment = 0.0;
    double neutral = 0.0;
    double contradiction = 0.0;
};

/// Three-way NLI scorer contract. Implementations may throw cfqa::Error for
/// per-query failures; score_dataset skips and counts those records.
class NliScorer {
public:
    virtual ~NliScorer() = default;
    virtual std::string id() const = 0;
    virtual NliDistribution score(const NliQuery& query) = 0;
};

/// Deterministic scorer for desk-scale evaluation. Scripted entries come
/// from a JSONL fixture of
///   {"premise_hash": str|null, "hypothesis_hash": str|null,
///    "entailment": num, "neutral": num, "contradiction": num}
/// matched by SHA-256 of the query fields (null acts as a wildcard, most
/// specific entry wins). Unknown queries get a hash-derived distribution
/// unless strict.
class MockNliScorer : public NliScorer {
public:
    MockNliScorer(std::filesystem::path fixture, std::uint64_t seed, bool strict = false);

    std::string id() const override { return "mock-nli"; }
    NliDistribution score(const NliQuery& query) override;

private:
    struct Key {
        std::string premise_hash;     // empty = wildcard
        std::string hypothesis_hash;  // empty = wildcard
        bool operator<(const Key& o) const {
            return std::tie(premise_hash, hypothesis_hash) <
                   std::tie(o.premise_hash, o.hypothesis_hash);
        }
    };
    std::map<Key, NliDistribution> entries_;
    std::uint64_t seed_;
    bool strict_;
};

/// HTTP adapter: POST {base_url}/v1/nli {"premise", "hypothesis"} ->
/// {"entailment": num, "neutral": num, "contradiction": num}.
class HttpNliScorer : public NliScorer {
public:
    HttpNliScorer(std::string base_url, std::string api_key_env, int timeout_ms = 30000);

    std::string id() const override { return base_url_; }
    NliDistribution score(const NliQuery& query) override;

private:
    std::string base_url_;
    std::string api_key_;
    int timeout_ms_;
};

/// Exactly document + "\n\n" + question; no trimming or other transformation.
std::string format_premise(std::string_view document, std::string_view question);

/// Exactly question + "\n" + answer.
std::string format_hypothesis(std::string_view question, std::string_view answer);

enum class Aggregate { Mean, FractionAboveTau };

struct QualityConfig {
    Aggregate aggregate = Aggregate::Mean;
    double tau = 0.5;  // used by FractionAboveTau
    int max_workers = 1;
};

struct PerExampleQuality {
    std::string question_id;
    double entailment_generated = 0.0;   // premise vs generated answer
    double contradiction_gold = 0.0;     // premise vs original gold answer
};

struct QualityReport {
    double attribution_mean = 0.0;
    double counterfactuality_mean = 0.0;
    std::int64_t n = 0;
    std::int64_t skipped = 0;
    std::vector<PerExampleQuality> per_example;
};

/// Scores every record: attribution is the entailment of the generated
/// answer against its document, counterfactuality the contradiction of the
/// original gold answer against the same document. Empty datasets are an
/// error (the aggregates would be undefined).
QualityReport score_dataset(std::span<const corpus::CounterfactualRecord> records,
                            NliScorer& scorer, const QualityConfig& config = {});

void write_quality_report(const QualityReport& report, const std::filesystem::path& path);

}  // namespace cfqa::quality
